#pragma once

#include <array>
#include <cstdint>

namespace medose {

/// Philox4x64-10 counter-based generator (Salmon et al., Random123). Pure
/// function of (counter, key); no hidden state.
using PhiloxCounter = std::array<std::uint64_t, 4>;
using PhiloxKey = std::array<std::uint64_t, 2>;

PhiloxCounter philox4x64(PhiloxCounter counter, PhiloxKey key);

/// Uniform in (0, 1) from the top 52 bits; never returns 0 or 1.
double to_open_unit(std::uint64_t bits);

/// Sequential standard-normal draws from one (seed, stream) pair. Draw k is a
/// pure function of (seed, stream, k), so streams can be consumed in any
/// order or in parallel.
class NormalStream {
public:
    NormalStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

    double operator()();
    double at(std::uint64_t index) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t position() const { return next_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t next_ = 0;
    std::uint64_t cached_block_ = ~std::uint64_t{0};
    std::array<double, 4> cache_{};
};

/// Derives an independent 64-bit seed for child task `a`/`b` of `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

}  // namespace medose

#include "medose/rng.hpp"

#include <cmath>
#include <numbers>

namespace medose {

namespace {

constexpr std::uint64_t kM0 = 0xD2E7470EE14C6C93ULL;
constexpr std::uint64_t kM1 = 0xCA5A826395121157ULL;
constexpr std::uint64_t kW0 = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kW1 = 0xBB67AE8584CAA73BULL;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
    const unsigned __int128 product = static_cast<unsigned __int128>(a) * b;
    hi = static_cast<std::uint64_t>(product >> 64);
    lo = static_cast<std::uint64_t>(product);
}

// Domain tag in the second key word keeps sample streams and seed derivation apart.
constexpr std::uint64_t kSampleDomain = 0;
constexpr std::uint64_t kSeedDomain = 0x5EEDULL;

}  // namespace

PhiloxCounter philox4x64(PhiloxCounter x, PhiloxKey key) {
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kW0;
            key[1] += kW1;
        }
        std::uint64_t hi0, lo0, hi1, lo1;
        mulhilo(kM0, x[0], hi0, lo0);
        mulhilo(kM1, x[2], hi1, lo1);
        x = {hi1 ^ x[1] ^ key[0], lo1, hi0 ^ x[3] ^ key[1], lo0};
    }
    return x;
}

double to_open_unit(std::uint64_t bits) {
    // 52 bits so that the half-ulp offset keeps the top value below 1
    return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

namespace {

std::array<double, 4> normals_from_block(const PhiloxCounter& block) {
    // Box-Muller on both pairs of the block
    std::array<double, 4> out{};
    for (int pair = 0; pair < 2; ++pair) {
        const double radius = std::sqrt(-2.0 * std::log(to_open_unit(block[2 * pair])));
        const double angle = 2.0 * std::numbers::pi * to_open_unit(block[2 * pair + 1]);
        out[2 * pair] = radius * std::cos(angle);
        out[2 * pair + 1] = radius * std::sin(angle);
    }
    return out;
}

}  // namespace

double NormalStream::at(std::uint64_t index) const {
    const auto block = philox4x64({index / 4, stream_, 0, 0}, {seed_, kSampleDomain});
    return normals_from_block(block)[index % 4];
}

double NormalStream::operator()() {
    const std::uint64_t block_index = next_ / 4;
    if (block_index != cached_block_) {
        cache_ = normals_from_block(philox4x64({block_index, stream_, 0, 0}, {seed_, kSampleDomain}));
        cached_block_ = block_index;
    }
    return cache_[next_++ % 4];
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    return philox4x64({a, b, 0, 0}, {master, kSeedDomain})[0];
}

}  // namespace medose

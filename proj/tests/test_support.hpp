#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "medose/data.hpp"
#include "medose/estimators.hpp"
#include "medose/models.hpp"

namespace medose::testing {

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

inline CurveParams params(std::initializer_list<double> values) {
    CurveParams p(static_cast<Eigen::Index>(values.size()));
    Eigen::Index k = 0;
    for (double v : values) p(k++) = v;
    return p;
}

inline std::vector<double> log_doses(double lo, double hi, int n) {
    std::vector<double> out;
    for (int k = 0; k < n; ++k) out.push_back(std::pow(10.0, std::log10(lo) + (std::log10(hi) - std::log10(lo)) * k / (n - 1)));
    return out;
}

/// Observations on one curve per entry of `curves`, with `clusters` clusters,
/// plus optional Gaussian noise from a fixed std::mt19937_64 seed.
inline Dataset curve_data(ModelFamily family, const std::vector<std::pair<std::string, CurveParams>>& curves,
                          const std::vector<double>& doses, int clusters, double noise_sd = 0.0,
                          unsigned seed = 1) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<Observation> obs;
    for (int i = 0; i < clusters; ++i) {
        for (const auto& [id, p] : curves) {
            for (double x : doses) {
                obs.push_back({x, evaluate(family, p, x) + noise_sd * noise(gen), "k" + std::to_string(100 + i), id});
            }
        }
    }
    return Dataset(std::move(obs));
}

/// A hand-built fit with a single shared curve "1" (or the given layout), for
/// exercising derived quantities without estimation noise.
inline FitResult synthetic_fit(Estimator estimator, ModelFamily family, const Eigen::VectorXd& beta,
                               const std::vector<Param>& random = {}, const Eigen::MatrixXd& omega = {},
                               const FixedEffectsSpec& fixed = {}, std::vector<std::string> curves = {"1"}) {
    FitResult fit;
    fit.estimator = estimator;
    fit.family = family;
    fit.fixed_spec = fixed;
    fit.curves = curves;
    fit.fixed_names = FixedLayout(family, fixed, curves).names();
    fit.beta_hat = beta;
    fit.vcov_beta = Eigen::MatrixXd::Identity(beta.size(), beta.size());
    for (Eigen::Index k = 0; k < beta.size(); ++k) fit.vcov_beta(k, k) = std::pow(0.02 * std::abs(beta(k)), 2);
    if (estimator == Estimator::NLME) {
        fit.random_spec = RandomEffectsSpec{random, CovarianceStructure::unstructured};
        fit.omega_hat = omega;
    }
    fit.sigma_hat = 1.0;
    fit.converged = true;
    fit.dose_min_positive = 0.01;
    fit.dose_max = 3.0;
    return fit;
}

/// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("medose_test_" + std::to_string(std::random_device{}()) + std::to_string(std::rand()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace medose::testing

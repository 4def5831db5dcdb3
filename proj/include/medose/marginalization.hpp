#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "medose/estimators.hpp"
#include "medose/optim.hpp"
#include "medose/quadrature.hpp"

namespace medose {

enum class EdMethod { conditional, marginalized, marginal };

std::string to_string(EdMethod method);
EdMethod ed_method_from_string(const std::string& name);

/// A scalar derived from the fixed effects with its delta-method standard error.
struct DerivedEstimate {
    double value = 0.0;
    double std_error = 0.0;
    Eigen::VectorXd gradient;
    EdMethod method = EdMethod::conditional;
};

/// Population-average curve: a weighted mixture of member curves whose
/// parameters are the fixed-effect curve shifted by random-effect offsets.
class MarginalCurve {
public:
    /// `offsets` has one row per member (node or sample) and one column per
    /// random parameter; `positions` locates those parameters in `fixed`.
    MarginalCurve(ModelFamily family, const CurveParams& fixed, const std::vector<int>& positions,
                  const Eigen::MatrixXd& offsets, const Eigen::VectorXd& weights,
                  double floor_fraction = 1e-12);
    /// Explicit member parameter vectors (family order) and weights.
    MarginalCurve(ModelFamily family, const std::vector<CurveParams>& members, const Eigen::VectorXd& weights,
                  int clamp_count = 0);

    double operator()(double dose) const;
    /// Weighted sums of the members' analytic limits (dose 0, dose infinity).
    std::pair<double, double> asymptotes() const;
    /// Members whose e or f had to be floored.
    int clamp_count() const { return clamps_; }
    std::size_t size() const { return weights_.size(); }

    /// Member values at `dose` (unweighted).
    Eigen::VectorXd member_values(double dose) const;
    Eigen::MatrixXd member_asymptotes() const;

private:
    std::vector<Eigen::Matrix<double, 5, 1>> members_;
    std::vector<double> weights_;
    int clamps_ = 0;
};

/// Quadrature-based marginalization of one mixed-effects fit. Holds the
/// transformed node set so repeated evaluations (root finding, delta-method
/// stencils) reuse it; the random-effects covariance is held fixed.
class Marginalizer {
public:
    explicit Marginalizer(const FitResult& fit, int points_per_dim = 9);

    MarginalCurve curve(std::string_view curve_id) const;
    MarginalCurve curve(std::string_view curve_id, const Eigen::VectorXd& beta) const;

    double predict(std::string_view curve_id, double dose) const;
    double effective_dose(std::string_view curve_id, double alpha) const;
    double effective_dose(std::string_view curve_id, double alpha, const Eigen::VectorXd& beta) const;

    int points_per_dim() const { return points_per_dim_; }
    const Eigen::MatrixXd& offsets() const { return offsets_; }

private:
    const FitResult* fit_;
    int points_per_dim_;
    std::vector<int> positions_;
    Eigen::MatrixXd offsets_;
    Eigen::VectorXd weights_;
};

/// Population-average prediction at `dose`.
double marginal_predict(const FitResult& fit, std::string_view curve_id, double dose, int points_per_dim = 9);

struct McPrediction {
    double estimate = 0.0;
    double mc_std_error = 0.0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
};

/// Monte Carlo counterpart of marginal_predict, drawing b = Omega z with z from
/// the Philox normal stream (seed, stream).
McPrediction mc_marginal_predict(const FitResult& fit, std::string_view curve_id, double dose,
                                 std::size_t n_samples, std::uint64_t seed, std::uint64_t stream = 0);

/// Root in log10 dose of (F(dose) - F(0)) / (F(inf) - F(0)) = alpha for a
/// monotone curve F: bracket from `start_dose` expanding up to 8 decades each
/// way, bisect to 1e-10 in log10 dose, finish with one secant step.
double solve_effective_dose(const std::function<double(double)>& curve, double at_zero, double at_infinity,
                            double alpha, double start_dose);

/// Effective dose of the population-average curve.
double marginalized_ed(const FitResult& fit, std::string_view curve_id, double alpha, int points_per_dim = 9);

struct McEffectiveDose {
    double ed = 0.0;
    double mc_std_error = 0.0;
    int clamp_count = 0;
};

/// Effective dose of an equally weighted Monte Carlo mixture with the
/// linearized sampling error of the root.
McEffectiveDose mc_effective_dose(const MarginalCurve& sample, double alpha, double start_dose);

/// Effective dose of a Monte Carlo population-average curve. The sample is
/// drawn once and reused for every evaluation along the root search.
McEffectiveDose mc_marginalized_ed(ModelFamily family, const CurveParams& fixed,
                                   const std::vector<int>& positions, const Eigen::MatrixXd& omega,
                                   double alpha, std::size_t n_samples, std::uint64_t seed,
                                   std::uint64_t stream = 0, double floor_fraction = 1e-12);

/// Delta method: central-difference gradient of `derived` at `at` (steps
/// cbrt(eps) * max(1, |x_k|)) and sqrt(g^T V g).
DerivedEstimate delta_method(const Eigen::MatrixXd& vcov, const ScalarFunction& derived,
                             const Eigen::VectorXd& at, EdMethod method = EdMethod::marginalized);
DerivedEstimate delta_method(const FitResult& fit, const ScalarFunction& derived,
                             EdMethod method = EdMethod::marginalized);

}  // namespace medose

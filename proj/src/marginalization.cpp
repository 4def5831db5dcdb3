#include "medose/marginalization.hpp"

#include <cmath>
#include <limits>

#include "medose/rng.hpp"

namespace medose {

std::string to_string(EdMethod method) {
    switch (method) {
        case EdMethod::conditional: return "conditional";
        case EdMethod::marginalized: return "marginalized";
        case EdMethod::marginal: return "marginal";
    }
    return "conditional";
}

EdMethod ed_method_from_string(const std::string& name) {
    if (name == "conditional") return EdMethod::conditional;
    if (name == "marginalized") return EdMethod::marginalized;
    if (name == "marginal") return EdMethod::marginal;
    throw Error(ErrorKind::method, "unknown method '" + name + "'");
}

MarginalCurve::MarginalCurve(ModelFamily family, const CurveParams& fixed, const std::vector<int>& positions,
                             const Eigen::MatrixXd& offsets, const Eigen::VectorXd& weights,
                             double floor_fraction) {
    validate_params(family, fixed);
    if (offsets.rows() != weights.size() || offsets.cols() != static_cast<Eigen::Index>(positions.size())) {
        throw Error(ErrorKind::domain, "random-effect offsets do not match weights or positions");
    }
    members_.reserve(weights.size());
    weights_.reserve(weights.size());
    Eigen::VectorXd shifted;
    for (Eigen::Index n = 0; n < weights.size(); ++n) {
        if (apply_random_effects(family, fixed, positions, offsets.row(n).transpose(), shifted, floor_fraction)) {
            ++clamps_;
        }
        members_.push_back(detail::expand(family, shifted));
        weights_.push_back(weights(n));
    }
}

MarginalCurve::MarginalCurve(ModelFamily family, const std::vector<CurveParams>& members,
                             const Eigen::VectorXd& weights, int clamp_count)
    : clamps_(clamp_count) {
    if (static_cast<Eigen::Index>(members.size()) != weights.size()) {
        throw Error(ErrorKind::domain, "member count does not match weights");
    }
    members_.reserve(members.size());
    for (std::size_t n = 0; n < members.size(); ++n) {
        validate_params(family, members[n]);
        members_.push_back(detail::expand(family, members[n]));
        weights_.push_back(weights(static_cast<Eigen::Index>(n)));
    }
}

double MarginalCurve::operator()(double dose) const {
    if (!(dose >= 0.0)) throw Error(ErrorKind::domain, "dose must be nonnegative");
    double acc = 0.0;
    for (std::size_t n = 0; n < members_.size(); ++n) {
        acc += weights_[n] * detail::evaluate_full<double>(members_[n], dose);
    }
    return acc;
}

std::pair<double, double> MarginalCurve::asymptotes() const {
    double zero = 0.0, infinity = 0.0;
    for (std::size_t n = 0; n < members_.size(); ++n) {
        const auto [at0, atinf] = detail::limits<double>(members_[n]);
        zero += weights_[n] * at0;
        infinity += weights_[n] * atinf;
    }
    return {zero, infinity};
}

Eigen::VectorXd MarginalCurve::member_values(double dose) const {
    Eigen::VectorXd out(members_.size());
    for (std::size_t n = 0; n < members_.size(); ++n) out(n) = detail::evaluate_full<double>(members_[n], dose);
    return out;
}

Eigen::MatrixXd MarginalCurve::member_asymptotes() const {
    Eigen::MatrixXd out(members_.size(), 2);
    for (std::size_t n = 0; n < members_.size(); ++n) {
        const auto [at0, atinf] = detail::limits<double>(members_[n]);
        out(n, 0) = at0;
        out(n, 1) = atinf;
    }
    return out;
}

Marginalizer::Marginalizer(const FitResult& fit, int points_per_dim)
    : fit_(&fit), points_per_dim_(points_per_dim) {
    if (fit.estimator != Estimator::NLME || !fit.random_spec || fit.omega_hat.size() == 0) {
        throw Error(ErrorKind::method,
                    "marginalization needs a mixed-effects fit; use conditional prediction for " +
                        to_string(fit.estimator) + " fits");
    }
    positions_ = fit.random_positions();
    const QuadratureGrid grid = build_grid(points_per_dim, static_cast<int>(positions_.size()));
    offsets_ = transform_nodes_by_factor(grid, fit.omega_hat);
    weights_ = grid.weights;
}

MarginalCurve Marginalizer::curve(std::string_view curve_id) const { return curve(curve_id, fit_->beta_hat); }

MarginalCurve Marginalizer::curve(std::string_view curve_id, const Eigen::VectorXd& beta) const {
    return MarginalCurve(fit_->family, curve_params(*fit_, curve_id, beta), positions_, offsets_, weights_);
}

double Marginalizer::predict(std::string_view curve_id, double dose) const { return curve(curve_id)(dose); }

double Marginalizer::effective_dose(std::string_view curve_id, double alpha) const {
    return effective_dose(curve_id, alpha, fit_->beta_hat);
}

double Marginalizer::effective_dose(std::string_view curve_id, double alpha, const Eigen::VectorXd& beta) const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::domain, "alpha must lie in (0, 1)");
    const CurveParams fixed = curve_params(*fit_, curve_id, beta);
    const MarginalCurve mean(fit_->family, fixed, positions_, offsets_, weights_);
    const auto [at0, atinf] = mean.asymptotes();
    return solve_effective_dose(mean, at0, atinf, alpha, conditional_ed(fit_->family, fixed, alpha));
}

double marginal_predict(const FitResult& fit, std::string_view curve_id, double dose, int points_per_dim) {
    return Marginalizer(fit, points_per_dim).predict(curve_id, dose);
}

namespace {

Eigen::MatrixXd draw_offsets(const Eigen::MatrixXd& omega, std::size_t n_samples, std::uint64_t seed,
                             std::uint64_t stream) {
    const Eigen::Index q = omega.rows();
    NormalStream normals(seed, stream);
    Eigen::MatrixXd z(n_samples, q);
    for (std::size_t k = 0; k < n_samples; ++k) {
        for (Eigen::Index j = 0; j < q; ++j) z(k, j) = normals();
    }
    return z * omega.transpose();
}

}  // namespace

McPrediction mc_marginal_predict(const FitResult& fit, std::string_view curve_id, double dose,
                                 std::size_t n_samples, std::uint64_t seed, std::uint64_t stream) {
    if (fit.estimator != Estimator::NLME || !fit.random_spec) {
        throw Error(ErrorKind::method, "Monte Carlo marginalization needs a mixed-effects fit");
    }
    if (n_samples < 2) throw Error(ErrorKind::domain, "need at least two Monte Carlo samples");
    const Eigen::MatrixXd offsets = draw_offsets(fit.omega_hat, n_samples, seed, stream);
    const Eigen::VectorXd weights = Eigen::VectorXd::Constant(n_samples, 1.0 / n_samples);
    const MarginalCurve sample(fit.family, curve_params(fit, curve_id), fit.random_positions(), offsets, weights);
    const Eigen::VectorXd values = sample.member_values(dose);
    McPrediction out;
    out.estimate = values.mean();
    const double var = (values.array() - out.estimate).square().sum() / static_cast<double>(n_samples - 1);
    out.mc_std_error = std::sqrt(var / static_cast<double>(n_samples));
    out.n_samples = n_samples;
    out.seed = seed;
    out.stream = stream;
    return out;
}

double solve_effective_dose(const std::function<double(double)>& curve, double at_zero, double at_infinity,
                            double alpha, double start_dose) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::domain, "alpha must lie in (0, 1)");
    const double span = at_infinity - at_zero;
    if (!std::isfinite(span) || std::abs(span) <= 1e-12 * std::max(std::abs(at_zero), std::abs(at_infinity))) {
        throw Error(ErrorKind::domain, "degenerate asymptotes: the curve has no dose-related span");
    }
    const auto excess = [&](double t) { return (curve(std::pow(10.0, t)) - at_zero) / span - alpha; };
    const double t0 = (start_dose > 0.0 && std::isfinite(start_dose)) ? std::log10(start_dose) : 0.0;
    constexpr double kDecades = 8.0;
    double lo = t0, hi = t0;
    double s_lo = excess(t0), s_hi = s_lo;
    if (s_lo > 0.0) {
        while (s_lo > 0.0) {
            hi = lo;
            s_hi = s_lo;
            lo -= 1.0;
            if (lo < t0 - kDecades) throw Error(ErrorKind::no_solution, "no effective dose within 8 decades below the start");
            s_lo = excess(lo);
        }
    } else {
        while (s_hi < 0.0) {
            lo = hi;
            s_lo = s_hi;
            hi += 1.0;
            if (hi > t0 + kDecades) throw Error(ErrorKind::no_solution, "no effective dose within 8 decades above the start");
            s_hi = excess(hi);
        }
    }
    while (hi - lo >= 1e-10) {
        const double mid = 0.5 * (lo + hi);
        const double s_mid = excess(mid);
        if (s_mid < 0.0) {
            lo = mid;
            s_lo = s_mid;
        } else {
            hi = mid;
            s_hi = s_mid;
        }
    }
    const double t = (s_hi > s_lo) ? lo - s_lo * (hi - lo) / (s_hi - s_lo) : 0.5 * (lo + hi);
    return std::pow(10.0, t);
}

double marginalized_ed(const FitResult& fit, std::string_view curve_id, double alpha, int points_per_dim) {
    return Marginalizer(fit, points_per_dim).effective_dose(curve_id, alpha);
}

McEffectiveDose mc_marginalized_ed(ModelFamily family, const CurveParams& fixed, const std::vector<int>& positions,
                                   const Eigen::MatrixXd& omega, double alpha, std::size_t n_samples,
                                   std::uint64_t seed, std::uint64_t stream, double floor_fraction) {
    if (n_samples < 2) throw Error(ErrorKind::domain, "need at least two Monte Carlo samples");
    const Eigen::MatrixXd offsets = draw_offsets(omega, n_samples, seed, stream);
    const Eigen::VectorXd weights = Eigen::VectorXd::Constant(n_samples, 1.0 / n_samples);
    const MarginalCurve sample(family, fixed, positions, offsets, weights, floor_fraction);
    return mc_effective_dose(sample, alpha, conditional_ed(family, fixed, alpha));
}

McEffectiveDose mc_effective_dose(const MarginalCurve& sample, double alpha, double start_dose) {
    const std::size_t n_samples = sample.size();
    if (n_samples < 2) throw Error(ErrorKind::domain, "need at least two Monte Carlo samples");
    const auto [at0, atinf] = sample.asymptotes();
    McEffectiveDose out;
    out.ed = solve_effective_dose(sample, at0, atinf, alpha, start_dose);
    out.clamp_count = sample.clamp_count();

    // the root solves mean_k g_k(x) = 0; propagate the spread of g_k through the slope
    const Eigen::MatrixXd limits = sample.member_asymptotes();
    const Eigen::VectorXd g = sample.member_values(out.ed) - limits.col(0) - alpha * (limits.col(1) - limits.col(0));
    const double sd = std::sqrt((g.array() - g.mean()).square().sum() / static_cast<double>(n_samples - 1));
    const double h = central_step(1.0) * out.ed;
    const double slope = (sample(out.ed + h) - sample(out.ed - h)) / (2.0 * h);
    out.mc_std_error = sd / std::sqrt(static_cast<double>(n_samples)) / std::abs(slope);
    return out;
}

DerivedEstimate delta_method(const Eigen::MatrixXd& vcov, const ScalarFunction& derived, const Eigen::VectorXd& at,
                             EdMethod method) {
    if (vcov.rows() != at.size() || vcov.cols() != at.size()) {
        throw Error(ErrorKind::domain, "variance matrix does not match the parameter vector");
    }
    const auto value_at = [&](const Eigen::VectorXd& x, Eigen::Index coordinate) {
        double v = 0.0;
        try {
            v = derived(x);
        } catch (const Error& e) {
            throw Error(ErrorKind::evaluation, "derived quantity failed at coordinate " + std::to_string(coordinate) +
                                                   ": " + e.what());
        }
        if (!std::isfinite(v)) {
            throw Error(ErrorKind::evaluation, "derived quantity is not finite at coordinate " + std::to_string(coordinate));
        }
        return v;
    };
    DerivedEstimate out;
    out.method = method;
    out.value = value_at(at, -1);
    out.gradient.resize(at.size());
    Eigen::VectorXd work = at;
    for (Eigen::Index k = 0; k < at.size(); ++k) {
        const double h = central_step(at(k));
        work(k) = at(k) + h;
        const double up = value_at(work, k);
        work(k) = at(k) - h;
        const double down = value_at(work, k);
        work(k) = at(k);
        out.gradient(k) = (up - down) / (2.0 * h);
    }
    out.std_error = std::sqrt(std::max(0.0, out.gradient.dot(vcov * out.gradient)));
    return out;
}

DerivedEstimate delta_method(const FitResult& fit, const ScalarFunction& derived, EdMethod method) {
    return delta_method(fit.vcov_beta, derived, fit.beta_hat, method);
}

}  // namespace medose

#include "medose/inference.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <tuple>

#include "medose/csv.hpp"

namespace medose {

namespace {

// alpha 0.07 prints as 7, not 7.000000000000001
double percent(double alpha) { return std::round(alpha * 1e11) / 1e9; }

}  // namespace

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::domain, "quantile probability must lie in (0, 1)");
    // Acklam's rational approximation, relative error below 1.2e-9
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double low = 0.02425;
    double x;
    if (p < low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement against the exact cdf
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

std::pair<double, double> wald_ci(double estimate, double std_error, double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::domain, "confidence level must lie in (0, 1)");
    if (!(std_error >= 0.0)) throw Error(ErrorKind::domain, "standard error must be nonnegative");
    const double half = normal_quantile(0.5 * (1.0 + level)) * std_error;
    return {estimate - half, estimate + half};
}

void check_method(const FitResult& fit, EdMethod method) {
    if (method == EdMethod::marginalized && fit.estimator != Estimator::NLME) {
        throw Error(ErrorKind::method, "marginalized effective doses need an nlme fit, got " + to_string(fit.estimator));
    }
    if (method == EdMethod::marginal && fit.estimator == Estimator::NLME) {
        throw Error(ErrorKind::method, "marginal effective doses come from nls or gnls fits; use marginalized for nlme");
    }
}

double effective_dose(const FitResult& fit, std::string_view curve_id, double alpha, EdMethod method,
                      const Eigen::VectorXd& beta, const Marginalizer* marginalizer) {
    if (method == EdMethod::marginalized) {
        if (marginalizer) return marginalizer->effective_dose(curve_id, alpha, beta);
        return Marginalizer(fit).effective_dose(curve_id, alpha, beta);
    }
    return conditional_ed(fit.family, curve_params(fit, curve_id, beta), alpha);
}

EdTable ed_table(const FitResult& fit, const std::vector<double>& alphas, EdMethod method, int points_per_dim) {
    check_method(fit, method);
    for (const double alpha : alphas) {
        if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::domain, "alpha must lie in (0, 1)");
    }
    EdTable table;
    table.quad_points = method == EdMethod::marginalized ? points_per_dim : 0;
    std::optional<Marginalizer> marginalizer;
    if (method == EdMethod::marginalized) marginalizer.emplace(fit, points_per_dim);
    const Marginalizer* m = marginalizer ? &*marginalizer : nullptr;
    for (const auto& curve : fit.curves) {
        for (const double alpha : alphas) {
            const DerivedEstimate est = delta_method(
                fit, [&](const Eigen::VectorXd& beta) { return effective_dose(fit, curve, alpha, method, beta, m); },
                method);
            table.rows.push_back({curve, alpha, method, est.value, est.std_error});
        }
    }
    return table;
}

RelativePotency relative_potency(const FitResult& fit, std::string_view curve_a, std::string_view curve_b,
                                 double alpha, EdMethod method, int points_per_dim, double level, bool log_scale) {
    check_method(fit, method);
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::domain, "alpha must lie in (0, 1)");
    const FixedLayout layout = fit.layout();
    layout.curve_position(curve_a);
    layout.curve_position(curve_b);
    std::optional<Marginalizer> marginalizer;
    if (method == EdMethod::marginalized) marginalizer.emplace(fit, points_per_dim);
    const Marginalizer* m = marginalizer ? &*marginalizer : nullptr;

    const double denominator = effective_dose(fit, curve_b, alpha, method, fit.beta_hat, m);
    if (!(std::abs(denominator) > std::numeric_limits<double>::min() * 1e6)) {
        throw Error(ErrorKind::division_hazard, "effective dose of curve '" + std::string(curve_b) + "' is zero");
    }
    const auto ratio = [&](const Eigen::VectorXd& beta) {
        const double den = effective_dose(fit, curve_b, alpha, method, beta, m);
        if (den == 0.0) throw Error(ErrorKind::division_hazard, "denominator effective dose is zero");
        return effective_dose(fit, curve_a, alpha, method, beta, m) / den;
    };
    const DerivedEstimate est = delta_method(fit, ratio, method);

    RelativePotency out;
    out.numerator_curve = std::string(curve_a);
    out.denominator_curve = std::string(curve_b);
    out.alpha = alpha;
    out.estimate = est.value;
    out.std_error = est.std_error;
    out.level = level;
    if (log_scale) {
        if (!(est.value > 0.0)) throw Error(ErrorKind::domain, "log-scale interval needs a positive ratio");
        const auto [lo, hi] = wald_ci(std::log(est.value), est.std_error / est.value, level);
        out.ci_lower = std::exp(lo);
        out.ci_upper = std::exp(hi);
    } else {
        std::tie(out.ci_lower, out.ci_upper) = wald_ci(est.value, est.std_error, level);
    }
    return out;
}

std::vector<PredictionRow> predict_curves(const FitResult& fit, std::string_view curve_id,
                                          const std::vector<double>& doses, const std::set<CurveKind>& which,
                                          int points_per_dim) {
    if (doses.empty()) throw Error(ErrorKind::domain, "dose grid is empty");
    for (const double x : doses) {
        if (!(x >= 0.0)) throw Error(ErrorKind::domain, "dose grid must be nonnegative");
    }
    if (which.count(CurveKind::cluster_specific) && fit.estimator != Estimator::NLME) {
        throw Error(ErrorKind::method, "cluster-specific curves need an nlme fit");
    }
    if (which.count(CurveKind::marginalized) && fit.estimator != Estimator::NLME) {
        throw Error(ErrorKind::method, "marginalized curves need an nlme fit");
    }
    const CurveParams fixed = curve_params(fit, curve_id);
    std::vector<PredictionRow> rows;
    const std::string prefix = fit.curves.size() > 1 ? std::string(curve_id) + "/" : std::string();

    if (which.count(CurveKind::conditional)) {
        for (const double x : doses) rows.push_back({x, prefix + "conditional", evaluate(fit.family, fixed, x)});
    }
    if (which.count(CurveKind::marginalized)) {
        const MarginalCurve mean = Marginalizer(fit, points_per_dim).curve(curve_id);
        for (const double x : doses) rows.push_back({x, prefix + "marginalized", mean(x)});
    }
    if (which.count(CurveKind::cluster_specific)) {
        const std::vector<int> positions = fit.random_positions();
        Eigen::VectorXd shifted;
        for (const auto& cluster : fit.clusters) {
            bool has_curve = false;
            for (const auto& c : cluster.curves) has_curve = has_curve || c == curve_id;
            if (!has_curve || cluster.eblup.size() == 0) continue;
            apply_random_effects(fit.family, fixed, positions, cluster.eblup, shifted);
            const auto full = detail::expand(fit.family, shifted);
            for (const double x : doses) {
                rows.push_back({x, prefix + "cluster:" + cluster.id, detail::evaluate_full<double>(full, x)});
            }
        }
    }
    return rows;
}

std::vector<double> default_dose_grid(const FitResult& fit, int count) {
    if (count < 1) throw Error(ErrorKind::domain, "dose grid needs at least one point");
    std::vector<double> grid;
    if (fit.has_zero_dose) grid.push_back(0.0);
    const double lo = std::log10(fit.dose_min_positive), hi = std::log10(fit.dose_max);
    if (count == 1 || !(hi > lo)) {
        grid.push_back(fit.dose_max);
        return grid;
    }
    for (int k = 0; k < count; ++k) grid.push_back(std::pow(10.0, lo + (hi - lo) * k / (count - 1)));
    return grid;
}

void write_ed_csv(std::ostream& out, const EdTable& table) {
    out << "curve_id,alpha,method,estimate,std_error\n";
    for (const auto& row : table.rows) {
        out << csv_escape(row.curve_id) << ',' << format_double(percent(row.alpha)) << ',' << to_string(row.method)
            << ',' << format_double(row.estimate) << ',' << format_double(row.std_error) << '\n';
    }
}

void write_rp_csv(std::ostream& out, const std::vector<RelativePotency>& rows) {
    out << "numerator_curve,denominator_curve,alpha,estimate,std_error,ci_lower,ci_upper,level\n";
    for (const auto& row : rows) {
        out << csv_escape(row.numerator_curve) << ',' << csv_escape(row.denominator_curve) << ','
            << format_double(percent(row.alpha)) << ',' << format_double(row.estimate) << ','
            << format_double(row.std_error) << ',' << format_double(row.ci_lower) << ','
            << format_double(row.ci_upper) << ',' << format_double(row.level) << '\n';
    }
}

void write_prediction_csv(std::ostream& out, const std::vector<PredictionRow>& rows) {
    out << "dose,series_label,value\n";
    for (const auto& row : rows) {
        out << format_double(row.dose) << ',' << csv_escape(row.series_label) << ',' << format_double(row.value)
            << '\n';
    }
}

}  // namespace medose

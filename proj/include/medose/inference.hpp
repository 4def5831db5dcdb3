#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "medose/estimators.hpp"
#include "medose/marginalization.hpp"

namespace medose {

/// Standard normal quantile: rational approximation refined by one Halley step.
double normal_quantile(double p);

/// estimate -/+ z_{(1+level)/2} * std_error.
std::pair<double, double> wald_ci(double estimate, double std_error, double level);

struct EdRow {
    std::string curve_id;
    /// Fraction in (0, 1); emitted as a percent.
    double alpha = 0.0;
    EdMethod method = EdMethod::conditional;
    double estimate = 0.0;
    double std_error = 0.0;
};

struct EdTable {
    std::vector<EdRow> rows;
    int quad_points = 0;
};

/// Throws ErrorKind::method when the method does not suit the estimator:
/// marginalized needs NLME, marginal needs NLS or GNLS.
void check_method(const FitResult& fit, EdMethod method);

/// Effective dose of one curve under `method` at a supplied fixed-effects vector.
double effective_dose(const FitResult& fit, std::string_view curve_id, double alpha, EdMethod method,
                      const Eigen::VectorXd& beta, const Marginalizer* marginalizer = nullptr);

/// One row per (curve, alpha), curves in fit order. Alphas are fractions.
EdTable ed_table(const FitResult& fit, const std::vector<double>& alphas, EdMethod method, int points_per_dim = 9);

struct RelativePotency {
    std::string numerator_curve;
    std::string denominator_curve;
    double alpha = 0.0;
    double estimate = 0.0;
    double std_error = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double level = 0.95;
};

/// ED(a) / ED(b) with a delta-method SE. With `log_scale` the Wald interval
/// is built for log(ratio) and exponentiated; the default is the plain ratio.
RelativePotency relative_potency(const FitResult& fit, std::string_view curve_a, std::string_view curve_b,
                                 double alpha, EdMethod method, int points_per_dim = 9, double level = 0.95,
                                 bool log_scale = false);

enum class CurveKind { conditional, marginalized, cluster_specific };

struct PredictionRow {
    double dose = 0.0;
    std::string series_label;
    double value = 0.0;
};

/// Labels: "conditional", "marginalized", "cluster:<id>". Cluster series are
/// the fixed-effect curve shifted by each cluster's EBLUP, for clusters that
/// observed the curve. Throws ErrorKind::method for cluster series without NLME.
std::vector<PredictionRow> predict_curves(const FitResult& fit, std::string_view curve_id,
                                          const std::vector<double>& doses, const std::set<CurveKind>& which,
                                          int points_per_dim = 9);

/// `count` log-spaced doses over the positive dose range, with 0 prepended
/// when the data contained a zero dose.
std::vector<double> default_dose_grid(const FitResult& fit, int count = 100);

void write_ed_csv(std::ostream& out, const EdTable& table);
void write_rp_csv(std::ostream& out, const std::vector<RelativePotency>& rows);
void write_prediction_csv(std::ostream& out, const std::vector<PredictionRow>& rows);

}  // namespace medose

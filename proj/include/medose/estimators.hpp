#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medose/data.hpp"
#include "medose/models.hpp"
#include "medose/optim.hpp"

namespace medose {

enum class Sharing { shared_across_curves, separate_per_curve };

/// Which model parameters get one fixed effect per curve. Parameters not
/// listed are shared across curves.
struct FixedEffectsSpec {
    std::map<Param, Sharing> sharing;

    Sharing of(Param param) const;

    static FixedEffectsSpec all_shared() { return {}; }
    static FixedEffectsSpec all_separate(ModelFamily family);
};

enum class CovarianceStructure { diagonal, unstructured };

struct RandomEffectsSpec {
    std::vector<Param> random_parameters;
    CovarianceStructure covariance_structure = CovarianceStructure::unstructured;
};

/// Dummy-coded fixed-effects design: maps (curve, model parameter) to a
/// coordinate of the fixed-effects vector. Coordinates are grouped by model
/// parameter in family order; separate parameters list curves in sorted order.
class FixedLayout {
public:
    FixedLayout(ModelFamily family, const FixedEffectsSpec& spec, std::vector<std::string> curves);

    ModelFamily family() const { return family_; }
    int size() const { return static_cast<int>(coord_param_.size()); }
    int curve_count() const { return static_cast<int>(curves_.size()); }
    const std::vector<std::string>& curves() const { return curves_; }
    const std::vector<std::string>& names() const { return names_; }

    /// Throws ErrorKind::lookup for unknown labels.
    int curve_position(std::string_view curve_id) const;
    int index(int curve, int param_position) const { return index_[curve][param_position]; }
    Param param_of(int coordinate) const { return coord_param_[coordinate]; }

    CurveParams curve_params(const Eigen::VectorXd& beta, int curve) const;

    /// e and f coordinates are optimized on the log scale.
    bool log_scale(int coordinate) const;
    Eigen::VectorXd to_internal(const Eigen::VectorXd& beta) const;
    Eigen::VectorXd to_natural(const Eigen::VectorXd& theta) const;

private:
    ModelFamily family_;
    std::vector<std::string> curves_;
    std::vector<std::vector<int>> index_;
    std::vector<Param> coord_param_;
    std::vector<std::string> names_;
};

enum class Estimator { NLS, GNLS, NLME };

std::string to_string(Estimator estimator);

struct ClusterInfo {
    std::string id;
    std::vector<std::string> curves;
    /// Posterior mode of the cluster's random effects (NLME only).
    Eigen::VectorXd eblup;
};

struct FitResult {
    Estimator estimator = Estimator::NLS;
    ModelFamily family = ModelFamily::LL4;
    FixedEffectsSpec fixed_spec;
    std::optional<RandomEffectsSpec> random_spec;
    std::vector<std::string> curves;
    std::vector<std::string> fixed_names;

    Eigen::VectorXd beta_hat;
    Eigen::MatrixXd vcov_beta;
    /// Lower Cholesky factor of the random-effects covariance; empty unless NLME.
    Eigen::MatrixXd omega_hat;
    double sigma_hat = 0.0;
    std::optional<double> rho_hat;
    bool rho_at_boundary = false;
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;

    std::vector<ClusterInfo> clusters;
    std::size_t n_obs = 0;
    double dose_min_positive = 0.0;
    double dose_max = 0.0;
    bool has_zero_dose = false;

    FixedLayout layout() const { return FixedLayout(family, fixed_spec, curves); }
    Eigen::MatrixXd random_covariance() const { return omega_hat * omega_hat.transpose(); }
    /// Positions of the random parameters within the family parameter vector.
    std::vector<int> random_positions() const;
};

struct FitOptions {
    LeastSquaresOptions least_squares{};
    QuasiNewtonOptions outer{};
    int inner_max_iterations = 50;
    double inner_tolerance = 1e-10;
};

FitResult fit_nls(const Dataset& data, ModelFamily family,
                  const FixedEffectsSpec& fixed = FixedEffectsSpec::all_shared(),
                  const FitOptions& options = {});

/// Compound-symmetry residual correlation within clusters, estimated by
/// profiling the Gaussian likelihood over rho.
FitResult fit_gnls(const Dataset& data, ModelFamily family,
                   const FixedEffectsSpec& fixed = FixedEffectsSpec::all_shared(),
                   const FitOptions& options = {});

/// Random effects on the natural parameter scale, marginal likelihood by the
/// Laplace approximation.
FitResult fit_nlme(const Dataset& data, ModelFamily family, const FixedEffectsSpec& fixed,
                   const RandomEffectsSpec& random, const FitOptions& options = {});

/// Curve parameters at zero random effects, from beta_hat or a supplied beta.
CurveParams curve_params(const FitResult& fit, std::string_view curve_id);
CurveParams curve_params(const FitResult& fit, std::string_view curve_id, const Eigen::VectorXd& beta);

/// Gaussian log-likelihood with independent residuals.
double nls_loglik(const Dataset& data, const FixedLayout& layout, const Eigen::VectorXd& beta,
                  double sigma);

/// Gaussian log-likelihood with compound-symmetry correlation rho inside clusters.
double gnls_loglik(const Dataset& data, const FixedLayout& layout, const Eigen::VectorXd& beta,
                   double sigma, double rho);

/// Laplace-approximate marginal log-likelihood. `omega` is the lower Cholesky
/// factor of the random-effects covariance; when `modes` is given it receives
/// each cluster's random-effects mode in sorted cluster order.
double nlme_loglik(const Dataset& data, const FixedLayout& layout, const RandomEffectsSpec& random,
                   const Eigen::VectorXd& beta, const Eigen::MatrixXd& omega, double sigma,
                   std::vector<Eigen::VectorXd>* modes = nullptr, const FitOptions& options = {});

/// Parameter vector of one observation's curve after adding random effects
/// `offsets` at `positions`; e and f are floored at 1e-12 of their
/// fixed-effect value. Returns true when the floor was applied.
bool apply_random_effects(ModelFamily family, const Eigen::VectorXd& fixed_params,
                          const std::vector<int>& positions, const Eigen::VectorXd& offsets,
                          Eigen::VectorXd& out, double floor_fraction = 1e-12);

}  // namespace medose

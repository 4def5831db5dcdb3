#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "medose/data.hpp"
#include "medose/estimators.hpp"
#include "medose/marginalization.hpp"

namespace medose {

/// Data-generating setup for the clustered simulation study.
struct Scenario {
    ModelFamily family = ModelFamily::LL3;
    /// Fixed effects in family order.
    CurveParams fixed;
    std::vector<Param> random_parameters;
    /// Random-effect standard deviations, aligned with random_parameters.
    Eigen::VectorXd random_sd;
    Eigen::MatrixXd correlation;
    CovarianceStructure structure = CovarianceStructure::unstructured;
    double residual_sd = 100.0;
    std::vector<double> doses;
    int obs_per_dose = 1;
    /// Multiplier on the SD of the random effect on e.
    double sigma_e_scale = 1.0;

    /// LL3 with b = 5, d = 2000, e = 0.5; random SDs (0.5, 500, 0.1) on
    /// (b, d, e); residual SD 100; ten log-spaced doses on [0.01, 3].
    static Scenario reference(CovarianceStructure structure = CovarianceStructure::unstructured);

    Eigen::MatrixXd covariance() const;
    /// Lower factor of covariance().
    Eigen::MatrixXd omega() const;
    std::vector<int> random_positions() const;
    /// Throws ErrorKind::validation on inconsistent sizes, negative SDs or a
    /// correlation matrix that is not symmetric positive semidefinite.
    void validate() const;
};

/// Reads `key = value` lines ('#' starts a comment) over Scenario::reference().
/// Keys: family; b c d e f; random (e.g. b,d,e); sd_b sd_c sd_d sd_e sd_f;
/// correlation (unstructured|diagonal); correlation_matrix (row-major list);
/// residual_sd; dose_min dose_max dose_levels; doses (explicit list);
/// obs_per_dose; sigma_e_scale.
Scenario load_scenario(std::istream& in);
Scenario load_scenario(const std::filesystem::path& path);

struct SimulatedData {
    Dataset dataset;
    /// m x q draws before flooring.
    Eigen::MatrixXd random_effects;
    /// Clusters with a parameter floored at 1e-6 of its fixed value.
    int clamp_count = 0;
};

/// Cluster i takes its random effects from Philox stream 2i and its residuals
/// from stream 2i + 1. Cluster ids are zero-padded so they sort numerically.
SimulatedData generate_dataset(const Scenario& scenario, int m, std::uint64_t seed);

/// Per-cluster parameters: fixed + offsets, with d, e and f floored at
/// 1e-6 of their fixed value. Returns true when the floor was applied.
bool cluster_params(const Scenario& scenario, const Eigen::VectorXd& offsets, CurveParams& out);

/// Effective dose of the population-average curve at the true parameters,
/// from one Monte Carlo sample reused along the whole root search.
McEffectiveDose mc_true_ed(const Scenario& scenario, double alpha, std::size_t n_samples, std::uint64_t seed);

enum class StudyEstimator { nls, gnls, nlme_unstructured, nlme_diagonal };

std::string to_string(StudyEstimator estimator);
StudyEstimator study_estimator_from_string(const std::string& name);

struct StudyOptions {
    std::vector<int> m_list{2, 5, 10, 20};
    int replicates = 200;
    std::vector<double> alphas{0.1, 0.5, 0.9};
    std::vector<StudyEstimator> estimators{StudyEstimator::nls, StudyEstimator::gnls,
                                           StudyEstimator::nlme_unstructured, StudyEstimator::nlme_diagonal};
    int quad_points = 9;
    std::uint64_t seed = 1;
    std::size_t truth_samples = 100000;
    /// 0: MEDOSE_THREADS or all cores.
    int threads = 0;
    FitOptions fit_options{};
    /// Called after each finished replicate with (done, total).
    std::function<void(std::size_t, std::size_t)> progress;
};

/// One effective-dose estimate of one replicate.
struct StudyRecord {
    int m = 0;
    int replicate = 0;
    StudyEstimator estimator = StudyEstimator::nls;
    EdMethod method = EdMethod::conditional;
    double alpha = 0.0;
    bool ok = false;
    double estimate = 0.0;
    double std_error = 0.0;
    double truth = 0.0;
    std::string failure;
};

struct StudyCell {
    int m = 0;
    StudyEstimator estimator = StudyEstimator::nls;
    EdMethod method = EdMethod::conditional;
    double alpha = 0.0;
    double median_deviation = 0.0;
    double median_se = 0.0;
    int n_converged = 0;
    int n_failed = 0;
};

struct StudySummary {
    std::vector<StudyCell> cells;
    /// In (m, replicate, estimator, method, alpha) order.
    std::vector<StudyRecord> records;
    /// True marginal effective dose per alpha.
    std::vector<double> truth;
    std::vector<double> alphas;
};

/// Methods scored for an estimator: marginal for nls/gnls, conditional and
/// marginalized for the mixed models.
std::vector<EdMethod> study_methods(StudyEstimator estimator);

/// Replicates run in parallel; each draws from derive_seed(seed, m, r) and
/// results reduce in replicate order, so output does not depend on threads.
StudySummary run_study(const Scenario& scenario, const StudyOptions& options);

void summary_to_csv(const StudySummary& summary, std::ostream& out);

/// Worker count from MEDOSE_THREADS, else the hardware concurrency.
int worker_threads();

/// Runs task(i) for i in [0, count) on up to `threads` workers.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& task);

}  // namespace medose

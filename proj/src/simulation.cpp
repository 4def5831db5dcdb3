#include "medose/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "medose/csv.hpp"
#include "medose/inference.hpp"
#include "medose/quadrature.hpp"
#include "medose/rng.hpp"

namespace medose {

Scenario Scenario::reference(CovarianceStructure structure) {
    Scenario s;
    s.family = ModelFamily::LL3;
    s.fixed = CurveParams(3);
    s.fixed << 5.0, 2000.0, 0.5;
    s.random_parameters = {Param::b, Param::d, Param::e};
    s.random_sd = Eigen::Vector3d(0.5, 500.0, 0.1);
    s.structure = structure;
    if (structure == CovarianceStructure::unstructured) {
        s.correlation = Eigen::Matrix3d{{1.0, -0.9, 0.8}, {-0.9, 1.0, -0.5}, {0.8, -0.5, 1.0}};
    } else {
        s.correlation = Eigen::Matrix3d::Identity();
    }
    s.residual_sd = 100.0;
    for (int k = 0; k < 10; ++k) {
        s.doses.push_back(std::pow(10.0, std::log10(0.01) + (std::log10(3.0) - std::log10(0.01)) * k / 9.0));
    }
    return s;
}

Eigen::MatrixXd Scenario::covariance() const {
    Eigen::VectorXd sd = random_sd;
    for (std::size_t j = 0; j < random_parameters.size(); ++j) {
        if (random_parameters[j] == Param::e) sd(j) *= sigma_e_scale;
    }
    return sd.asDiagonal() * correlation * sd.asDiagonal();
}

Eigen::MatrixXd Scenario::omega() const { return psd_cholesky(covariance()); }

std::vector<int> Scenario::random_positions() const {
    std::vector<int> out;
    for (Param p : random_parameters) {
        const auto pos = parameter_position(family, p);
        if (!pos) throw Error(ErrorKind::validation, std::string("random parameter '") + to_char(p) + "' not in model");
        out.push_back(*pos);
    }
    return out;
}

void Scenario::validate() const {
    validate_params(family, fixed);
    const auto q = static_cast<Eigen::Index>(random_parameters.size());
    if (random_sd.size() != q || correlation.rows() != q || correlation.cols() != q) {
        throw Error(ErrorKind::validation, "random-effect SDs and correlation must match the random parameters");
    }
    random_positions();
    if ((random_sd.array() < 0.0).any() || !(sigma_e_scale >= 0.0)) {
        throw Error(ErrorKind::validation, "random-effect SDs must be nonnegative");
    }
    if (!(residual_sd >= 0.0)) throw Error(ErrorKind::validation, "residual SD must be nonnegative");
    if (doses.empty()) throw Error(ErrorKind::validation, "scenario has no doses");
    for (const double x : doses) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw Error(ErrorKind::validation, "doses must be finite and nonnegative");
    }
    if (obs_per_dose < 1) throw Error(ErrorKind::validation, "obs_per_dose must be at least 1");
    for (Eigen::Index i = 0; i < q; ++i) {
        if (std::abs(correlation(i, i) - 1.0) > 1e-12) throw Error(ErrorKind::validation, "correlation diagonal must be 1");
    }
    try {
        psd_cholesky(correlation);
    } catch (const Error& e) {
        throw Error(ErrorKind::validation, std::string("correlation matrix: ") + e.what());
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_number(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorKind::parse, "scenario key '" + key + "': '" + text + "' is not a number");
    }
}

}  // namespace

Scenario load_scenario(std::istream& in) {
    Scenario s = Scenario::reference();
    std::map<Param, double> fixed, sds;
    std::optional<std::vector<Param>> random;
    std::optional<std::string> correlation;
    std::optional<std::vector<double>> matrix;
    std::optional<double> dose_min, dose_max, dose_levels;
    std::optional<std::vector<double>> doses;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::parse, "scenario line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto param_key = key.size() == 1 ? param_from_char(key[0]) : std::nullopt;
        const auto sd_key = key.size() == 4 && key.rfind("sd_", 0) == 0 ? param_from_char(key[3]) : std::nullopt;
        if (key == "family") {
            s.family = family_from_string(value);
        } else if (param_key) {
            fixed[*param_key] = to_number(key, value);
        } else if (sd_key) {
            sds[*sd_key] = to_number(key, value);
        } else if (key == "random") {
            std::vector<Param> params;
            for (const auto& name : split_list(value)) {
                const auto p = name.size() == 1 ? param_from_char(name[0]) : std::nullopt;
                if (!p) throw Error(ErrorKind::parse, "scenario key 'random': unknown parameter '" + name + "'");
                params.push_back(*p);
            }
            random = params;
        } else if (key == "correlation") {
            if (value != "unstructured" && value != "diagonal") {
                throw Error(ErrorKind::parse, "correlation must be 'unstructured' or 'diagonal'");
            }
            correlation = value;
        } else if (key == "correlation_matrix" || key == "doses") {
            std::vector<double> values;
            for (const auto& item : split_list(value)) values.push_back(to_number(key, item));
            (key == "doses" ? doses : matrix) = values;
        } else if (key == "residual_sd") {
            s.residual_sd = to_number(key, value);
        } else if (key == "dose_min") {
            dose_min = to_number(key, value);
        } else if (key == "dose_max") {
            dose_max = to_number(key, value);
        } else if (key == "dose_levels") {
            dose_levels = to_number(key, value);
        } else if (key == "obs_per_dose") {
            s.obs_per_dose = static_cast<int>(to_number(key, value));
        } else if (key == "sigma_e_scale") {
            s.sigma_e_scale = to_number(key, value);
        } else {
            throw Error(ErrorKind::parse, "unknown scenario key '" + key + "'");
        }
    }

    const Scenario reference = Scenario::reference();
    // unset fixed effects keep the reference value, or c = 0 and f = 1
    CurveParams values(parameter_count(s.family));
    int k = 0;
    for (Param p : parameter_names(s.family)) {
        double v = p == Param::f ? 1.0 : 0.0;
        if (const auto pos = parameter_position(reference.family, p)) v = reference.fixed(*pos);
        if (const auto it = fixed.find(p); it != fixed.end()) v = it->second;
        values(k++) = v;
    }
    s.fixed = values;

    if (random) s.random_parameters = *random;
    const auto q = static_cast<Eigen::Index>(s.random_parameters.size());
    s.random_sd = Eigen::VectorXd::Zero(q);
    for (Eigen::Index j = 0; j < q; ++j) {
        const Param p = s.random_parameters[j];
        for (std::size_t r = 0; r < reference.random_parameters.size(); ++r) {
            if (reference.random_parameters[r] == p) s.random_sd(j) = reference.random_sd(r);
        }
        if (const auto it = sds.find(p); it != sds.end()) s.random_sd(j) = it->second;
    }
    s.structure = correlation && *correlation == "diagonal" ? CovarianceStructure::diagonal
                                                            : CovarianceStructure::unstructured;
    if (matrix) {
        if (static_cast<Eigen::Index>(matrix->size()) != q * q) {
            throw Error(ErrorKind::validation, "correlation_matrix needs " + std::to_string(q * q) + " entries");
        }
        s.correlation = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            matrix->data(), q, q);
    } else if (s.structure == CovarianceStructure::diagonal) {
        s.correlation = Eigen::MatrixXd::Identity(q, q);
    } else if (s.random_parameters == reference.random_parameters) {
        s.correlation = reference.correlation;
    } else {
        throw Error(ErrorKind::validation,
                    "unstructured correlation for a custom random list needs correlation_matrix");
    }
    if (doses) {
        s.doses = *doses;
    } else if (dose_min || dose_max || dose_levels) {
        const double lo = dose_min.value_or(0.01), hi = dose_max.value_or(3.0);
        const int n = static_cast<int>(dose_levels.value_or(10.0));
        if (!(lo > 0.0 && hi > lo) || n < 2) throw Error(ErrorKind::validation, "need 0 < dose_min < dose_max and dose_levels >= 2");
        s.doses.clear();
        for (int j = 0; j < n; ++j) {
            s.doses.push_back(std::pow(10.0, std::log10(lo) + (std::log10(hi) - std::log10(lo)) * j / (n - 1)));
        }
    }
    s.validate();
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open scenario file '" + path.string() + "'");
    return load_scenario(in);
}

bool cluster_params(const Scenario& scenario, const Eigen::VectorXd& offsets, CurveParams& out) {
    out = scenario.fixed;
    const std::vector<int> positions = scenario.random_positions();
    for (std::size_t j = 0; j < positions.size(); ++j) out(positions[j]) += offsets(static_cast<Eigen::Index>(j));
    bool clamped = false;
    const auto names = parameter_names(scenario.family);
    for (std::size_t k = 0; k < names.size(); ++k) {
        if (names[k] != Param::d && names[k] != Param::e && names[k] != Param::f) continue;
        const auto i = static_cast<Eigen::Index>(k);
        const double floor = 1e-6 * scenario.fixed(i);
        if (out(i) < floor) {
            out(i) = floor;
            clamped = true;
        }
    }
    return clamped;
}

SimulatedData generate_dataset(const Scenario& scenario, int m, std::uint64_t seed) {
    if (m < 2) throw Error(ErrorKind::domain, "need at least two clusters");
    scenario.validate();
    const Eigen::MatrixXd omega = scenario.omega();
    const auto q = omega.rows();
    const int width = static_cast<int>(std::to_string(m).size());
    std::vector<Observation> obs;
    obs.reserve(static_cast<std::size_t>(m) * scenario.doses.size() * scenario.obs_per_dose);
    Eigen::MatrixXd draws(m, q);
    int clamps = 0;
    CurveParams params;
    for (int i = 0; i < m; ++i) {
        NormalStream effects(seed, 2 * static_cast<std::uint64_t>(i));
        NormalStream noise(seed, 2 * static_cast<std::uint64_t>(i) + 1);
        Eigen::VectorXd z(q);
        for (Eigen::Index j = 0; j < q; ++j) z(j) = effects();
        const Eigen::VectorXd b = omega * z;
        draws.row(i) = b.transpose();
        if (cluster_params(scenario, b, params)) ++clamps;
        std::string id = std::to_string(i + 1);
        id = std::string(width - id.size(), '0') + id;
        for (const double x : scenario.doses) {
            const double mean = evaluate(scenario.family, params, x);
            for (int r = 0; r < scenario.obs_per_dose; ++r) {
                obs.push_back({x, mean + scenario.residual_sd * noise(), id, "1"});
            }
        }
    }
    return {Dataset(std::move(obs)), draws, clamps};
}

McEffectiveDose mc_true_ed(const Scenario& scenario, double alpha, std::size_t n_samples, std::uint64_t seed) {
    if (n_samples < 1000) throw Error(ErrorKind::domain, "the Monte Carlo truth needs at least 1000 samples");
    scenario.validate();
    const Eigen::MatrixXd omega = scenario.omega();
    const auto q = omega.rows();
    NormalStream normals(seed, 0);
    std::vector<CurveParams> members(n_samples);
    int clamps = 0;
    Eigen::VectorXd z(q);
    for (std::size_t k = 0; k < n_samples; ++k) {
        for (Eigen::Index j = 0; j < q; ++j) z(j) = normals();
        if (cluster_params(scenario, omega * z, members[k])) ++clamps;
    }
    const MarginalCurve sample(scenario.family, members,
                               Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_samples), 1.0 / n_samples),
                               clamps);
    return mc_effective_dose(sample, alpha, conditional_ed(scenario.family, scenario.fixed, alpha));
}

std::string to_string(StudyEstimator estimator) {
    switch (estimator) {
        case StudyEstimator::nls: return "nls";
        case StudyEstimator::gnls: return "gnls";
        case StudyEstimator::nlme_unstructured: return "nlme_un";
        case StudyEstimator::nlme_diagonal: return "nlme_diag";
    }
    return "nls";
}

StudyEstimator study_estimator_from_string(const std::string& name) {
    if (name == "nls") return StudyEstimator::nls;
    if (name == "gnls") return StudyEstimator::gnls;
    if (name == "nlme_un") return StudyEstimator::nlme_unstructured;
    if (name == "nlme_diag") return StudyEstimator::nlme_diagonal;
    throw Error(ErrorKind::invalid_parameter,
                "unknown study estimator '" + name + "' (expected nls, gnls, nlme_un, nlme_diag)");
}

std::vector<EdMethod> study_methods(StudyEstimator estimator) {
    if (estimator == StudyEstimator::nls || estimator == StudyEstimator::gnls) return {EdMethod::marginal};
    return {EdMethod::conditional, EdMethod::marginalized};
}

int worker_threads() {
    if (const char* env = std::getenv("MEDOSE_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& task) {
    const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

namespace {

FitResult fit_for(StudyEstimator estimator, const Scenario& scenario, const Dataset& data, const FitOptions& options) {
    switch (estimator) {
        case StudyEstimator::nls: return fit_nls(data, scenario.family, FixedEffectsSpec::all_shared(), options);
        case StudyEstimator::gnls: return fit_gnls(data, scenario.family, FixedEffectsSpec::all_shared(), options);
        case StudyEstimator::nlme_unstructured:
        case StudyEstimator::nlme_diagonal: {
            RandomEffectsSpec random;
            random.random_parameters = scenario.random_parameters;
            random.covariance_structure = estimator == StudyEstimator::nlme_diagonal
                                              ? CovarianceStructure::diagonal
                                              : CovarianceStructure::unstructured;
            return fit_nlme(data, scenario.family, FixedEffectsSpec::all_shared(), random, options);
        }
    }
    throw Error(ErrorKind::method, "unknown estimator");
}

double median(std::vector<double> values) {
    if (values.empty()) return std::nan("");
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + mid, values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    return 0.5 * (upper + *std::max_element(values.begin(), values.begin() + mid));
}

std::vector<StudyRecord> run_replicate(const Scenario& scenario, const StudyOptions& options,
                                       const std::vector<double>& truth, int m, int replicate) {
    const std::uint64_t seed =
        derive_seed(options.seed, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(replicate));
    const SimulatedData sim = generate_dataset(scenario, m, seed);
    std::vector<StudyRecord> out;
    for (const StudyEstimator estimator : options.estimators) {
        const std::vector<EdMethod> methods = study_methods(estimator);
        std::vector<StudyRecord> block;
        for (const EdMethod method : methods) {
            for (std::size_t a = 0; a < options.alphas.size(); ++a) {
                StudyRecord r;
                r.m = m;
                r.replicate = replicate;
                r.estimator = estimator;
                r.method = method;
                r.alpha = options.alphas[a];
                r.truth = truth[a];
                block.push_back(r);
            }
        }
        try {
            const FitResult fit = fit_for(estimator, scenario, sim.dataset, options.fit_options);
            if (!fit.converged) throw Error(ErrorKind::no_solution, "fit did not converge");
            std::optional<Marginalizer> marginalizer;
            if (fit.estimator == Estimator::NLME) marginalizer.emplace(fit, options.quad_points);
            const std::string curve = fit.curves.front();
            for (auto& r : block) {
                try {
                    const Marginalizer* mz = marginalizer ? &*marginalizer : nullptr;
                    const DerivedEstimate est = delta_method(
                        fit,
                        [&](const Eigen::VectorXd& beta) {
                            return effective_dose(fit, curve, r.alpha, r.method, beta, mz);
                        },
                        r.method);
                    r.estimate = est.value;
                    r.std_error = est.std_error;
                    r.ok = std::isfinite(est.value) && std::isfinite(est.std_error);
                    if (!r.ok) r.failure = "non-finite estimate";
                } catch (const std::exception& e) {
                    r.failure = e.what();
                }
            }
        } catch (const std::exception& e) {
            for (auto& r : block) r.failure = e.what();
        }
        out.insert(out.end(), block.begin(), block.end());
    }
    return out;
}

}  // namespace

StudySummary run_study(const Scenario& scenario, const StudyOptions& options) {
    if (options.replicates < 1) throw Error(ErrorKind::domain, "need at least one replicate");
    scenario.validate();
    for (const double alpha : options.alphas) {
        if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::domain, "alpha must lie in (0, 1)");
    }
    StudySummary summary;
    summary.alphas = options.alphas;
    const std::uint64_t truth_seed = derive_seed(options.seed, 0x7275746875ULL);
    for (const double alpha : options.alphas) {
        summary.truth.push_back(mc_true_ed(scenario, alpha, options.truth_samples, truth_seed).ed);
    }

    struct Task {
        int m;
        int replicate;
    };
    std::vector<Task> tasks;
    for (const int m : options.m_list) {
        for (int r = 0; r < options.replicates; ++r) tasks.push_back({m, r});
    }
    std::vector<std::vector<StudyRecord>> results(tasks.size());
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;
    const int threads = options.threads > 0 ? options.threads : worker_threads();
    parallel_for(tasks.size(), threads, [&](std::size_t i) {
        results[i] = run_replicate(scenario, options, summary.truth, tasks[i].m, tasks[i].replicate);
        const std::size_t finished = ++done;
        if (options.progress) {
            std::lock_guard lock(progress_mutex);
            options.progress(finished, tasks.size());
        }
    });
    for (auto& block : results) {
        summary.records.insert(summary.records.end(), block.begin(), block.end());
    }

    for (const int m : options.m_list) {
        for (const StudyEstimator estimator : options.estimators) {
            for (const EdMethod method : study_methods(estimator)) {
                for (const double alpha : options.alphas) {
                    StudyCell cell{m, estimator, method, alpha};
                    std::vector<double> deviations, ses;
                    for (const auto& r : summary.records) {
                        if (r.m != m || r.estimator != estimator || r.method != method || r.alpha != alpha) continue;
                        if (r.ok) {
                            deviations.push_back(r.estimate - r.truth);
                            ses.push_back(r.std_error);
                            ++cell.n_converged;
                        } else {
                            ++cell.n_failed;
                        }
                    }
                    cell.median_deviation = median(deviations);
                    cell.median_se = median(ses);
                    summary.cells.push_back(cell);
                }
            }
        }
    }
    return summary;
}

void summary_to_csv(const StudySummary& summary, std::ostream& out) {
    out << "m,estimator,method,alpha,median_deviation,median_se,n_converged,n_failed\n";
    for (const auto& c : summary.cells) {
        out << c.m << ',' << to_string(c.estimator) << ',' << to_string(c.method) << ','
            << format_double(std::round(c.alpha * 1e11) / 1e9) << ',' << format_double(c.median_deviation) << ','
            << format_double(c.median_se) << ',' << c.n_converged << ',' << c.n_failed << '\n';
    }
}

}  // namespace medose

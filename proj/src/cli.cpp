#include "medose/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "medose/csv.hpp"
#include "medose/data.hpp"
#include "medose/estimators.hpp"
#include "medose/fit_io.hpp"
#include "medose/inference.hpp"
#include "medose/simulation.hpp"

namespace medose::cli {

using nlohmann::json;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_parameter:
        case ErrorKind::method:
        case ErrorKind::lookup:
        case ErrorKind::domain:
        case ErrorKind::resource:
            return exit_config;
        case ErrorKind::io:
        case ErrorKind::parse:
        case ErrorKind::schema:
        case ErrorKind::validation:
        case ErrorKind::degenerate_data:
            return exit_data;
        case ErrorKind::rank_deficiency:
        case ErrorKind::evaluation:
        case ErrorKind::no_solution:
        case ErrorKind::division_hazard:
            return exit_numeric;
    }
    return exit_numeric;
}

namespace {

/// Raised for flag combinations CLI11 cannot check on its own.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string model = "LL4";
    std::string estimator;
    std::string random;
    std::string re_cov = "un";
    std::string shared;
    std::string data;
    std::string fit;
    std::string out;
    std::string format = "csv";
    std::string alphas;
    std::string method;
    int quad_points = 9;
    double level = 0.95;
    bool log_ci = false;
    std::uint64_t seed = 1;
    std::string which;
    std::string doses;
    int grid_points = 100;
    std::string curve;
    std::string numerator;
    std::string denominator;
    std::string config;
    std::string m_list = "2,5,10,20";
    int replicates = 200;
    std::string correlation;
    std::optional<double> sigma_e_scale;
    std::size_t mc_samples = 100000;
    std::string estimators = "nls,gnls,nlme_un,nlme_diag";
    int threads = 0;
};

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto a = item.find_first_not_of(" \t");
        if (a == std::string::npos) continue;
        out.push_back(item.substr(a, item.find_last_not_of(" \t") - a + 1));
    }
    return out;
}

double parse_number(const std::string& flag, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(flag + ": '" + text + "' is not a number");
}

std::vector<Param> parse_params(const std::string& flag, const std::string& text, ModelFamily family) {
    std::vector<Param> out;
    for (const auto& name : split(text)) {
        const auto p = name.size() == 1 ? param_from_char(name[0]) : std::nullopt;
        if (!p || !parameter_position(family, *p)) {
            throw ConfigError(flag + ": '" + name + "' is not a parameter of " + to_string(family));
        }
        out.push_back(*p);
    }
    return out;
}

/// Alphas as fractions from a list of percents.
std::vector<double> parse_alphas(const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split(text)) {
        const double percent = parse_number("--alphas", item);
        if (!(percent > 0.0 && percent < 100.0)) throw ConfigError("--alphas: percents must lie in (0, 100)");
        out.push_back(percent / 100.0);
    }
    if (out.empty()) throw ConfigError("--alphas: empty list");
    return out;
}

std::string timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    std::ostringstream s;
    s << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

json metadata(const std::string& subcommand, const std::string& estimator, int quad_points, std::uint64_t seed) {
    return {{"version", kVersion},   {"subcommand", subcommand}, {"quad_points", quad_points},
            {"seed", seed},          {"estimator", estimator},   {"timestamp", timestamp()}};
}

/// Writes `body` to --out (or `out`). CSV output stays free of run-specific
/// fields; its metadata goes to a `.meta.json` sidecar or the diagnostic stream.
void emit(const Options& o, std::ostream& out, std::ostream& err, const std::string& body, const json& meta) {
    if (o.out.empty()) {
        out << body;
        if (o.format == "csv") err << "metadata: " << meta.dump() << '\n';
        return;
    }
    std::ofstream file(o.out, std::ios::binary);
    if (!file) throw Error(ErrorKind::io, "cannot write '" + o.out + "'");
    file << body;
    if (!file) throw Error(ErrorKind::io, "write failed for '" + o.out + "'");
    if (o.format == "csv") {
        std::ofstream side(o.out + ".meta.json");
        side << meta.dump(2) << '\n';
    }
}

FitResult fit_inline(const Options& o, std::ostream& err) {
    if (o.data.empty()) throw ConfigError("need --data (or --fit for a stored fit)");
    const ModelFamily family = family_from_string(o.model);
    std::string estimator = o.estimator;
    if (estimator.empty()) estimator = o.random.empty() ? "nls" : "nlme";
    if (!o.random.empty() && estimator != "nlme") throw ConfigError("--random requires --estimator nlme");
    if (estimator == "nlme" && o.random.empty()) throw ConfigError("--estimator nlme needs --random");
    if (o.re_cov != "un" && o.re_cov != "diag") throw ConfigError("--re-cov must be diag or un");

    const Dataset data = load_csv(std::filesystem::path(o.data));
    FixedEffectsSpec fixed = FixedEffectsSpec::all_separate(family);
    for (Param p : parse_params("--shared", o.shared, family)) fixed.sharing.erase(p);

    err << "fitting " << to_string(family) << " by " << estimator << " to " << data.size() << " observations\n";
    switch (estimator_from_string(estimator)) {
        case Estimator::NLS: return fit_nls(data, family, fixed);
        case Estimator::GNLS: return fit_gnls(data, family, fixed);
        case Estimator::NLME: {
            RandomEffectsSpec random;
            random.random_parameters = parse_params("--random", o.random, family);
            if (random.random_parameters.empty()) throw ConfigError("--random: empty list");
            random.covariance_structure =
                o.re_cov == "diag" ? CovarianceStructure::diagonal : CovarianceStructure::unstructured;
            return fit_nlme(data, family, fixed, random);
        }
    }
    throw ConfigError("unknown estimator");
}

FitResult obtain_fit(const Options& o, std::ostream& err) {
    if (!o.fit.empty()) {
        if (!o.data.empty()) throw ConfigError("give either --fit or --data, not both");
        return load_fit(std::filesystem::path(o.fit));
    }
    return fit_inline(o, err);
}

int finish(const FitResult& fit, std::ostream& err) {
    if (fit.converged) return exit_ok;
    err << "warning: the fit did not converge; results were written but should not be trusted\n";
    return exit_nonconvergence;
}

void print_summary(const FitResult& fit, std::ostream& s) {
    s << "estimator: " << to_string(fit.estimator) << "  model: " << to_string(fit.family)
      << "  observations: " << fit.n_obs << "  clusters: " << fit.clusters.size() << '\n';
    s << "log-likelihood: " << std::setprecision(10) << fit.loglik << "  converged: " << (fit.converged ? "yes" : "no")
      << "  iterations: " << fit.iterations << '\n';
    s << "fixed effects:\n";
    for (std::size_t k = 0; k < fit.fixed_names.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        s << "  " << std::left << std::setw(16) << fit.fixed_names[k] << std::right << std::setw(16)
          << std::setprecision(8) << fit.beta_hat(i) << "  se " << std::setprecision(6)
          << std::sqrt(std::max(0.0, fit.vcov_beta(i, i))) << '\n';
    }
    s << "residual sd: " << std::setprecision(8) << fit.sigma_hat << '\n';
    if (fit.rho_hat) {
        s << "within-cluster correlation: " << *fit.rho_hat << (fit.rho_at_boundary ? " (at boundary)" : "") << '\n';
    }
    if (fit.random_spec && fit.omega_hat.size() > 0) {
        const Eigen::MatrixXd g = fit.random_covariance();
        s << "random effects (sd):";
        for (std::size_t j = 0; j < fit.random_spec->random_parameters.size(); ++j) {
            const auto i = static_cast<Eigen::Index>(j);
            s << ' ' << to_char(fit.random_spec->random_parameters[j]) << '=' << std::sqrt(std::max(0.0, g(i, i)));
        }
        s << '\n';
        if (fit.random_spec->covariance_structure == CovarianceStructure::unstructured && g.rows() > 1) {
            s << "random effects correlation:\n";
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                s << ' ';
                for (Eigen::Index j = 0; j < g.cols(); ++j) {
                    const double denom = std::sqrt(g(i, i) * g(j, j));
                    s << ' ' << std::setw(8) << std::setprecision(4) << (denom > 0.0 ? g(i, j) / denom : 0.0);
                }
                s << '\n';
            }
        }
    }
}

int cmd_fit(const Options& o, std::ostream& out, std::ostream& err) {
    const FitResult fit = fit_inline(o, err);
    json doc = to_json(fit);
    doc["metadata"] = metadata("fit", to_string(fit.estimator), 0, o.seed);
    const std::string body = doc.dump(2) + "\n";
    if (o.out.empty()) {
        out << body;
        print_summary(fit, err);
    } else {
        std::ofstream file(o.out, std::ios::binary);
        if (!file) throw Error(ErrorKind::io, "cannot write '" + o.out + "'");
        file << body;
        print_summary(fit, out);
    }
    return finish(fit, err);
}

EdMethod default_method(const FitResult& fit) {
    return fit.estimator == Estimator::NLME ? EdMethod::marginalized : EdMethod::marginal;
}

int cmd_ed(const Options& o, std::ostream& out, std::ostream& err) {
    const std::vector<double> alphas = parse_alphas(o.alphas.empty() ? "10,25,50,75,90" : o.alphas);
    const FitResult fit = obtain_fit(o, err);
    const EdMethod method = o.method.empty() ? default_method(fit) : ed_method_from_string(o.method);
    const EdTable table = ed_table(fit, alphas, method, o.quad_points);
    const json meta = metadata("ed", to_string(fit.estimator), o.quad_points, o.seed);
    std::ostringstream body;
    if (o.format == "json") {
        json rows = json::array();
        for (const auto& r : table.rows) {
            rows.push_back({{"curve_id", r.curve_id}, {"alpha", std::round(r.alpha * 1e11) / 1e9},
                            {"method", to_string(r.method)}, {"estimate", r.estimate}, {"std_error", r.std_error}});
        }
        body << json{{"metadata", meta}, {"rows", rows}}.dump(2) << '\n';
    } else {
        write_ed_csv(body, table);
    }
    emit(o, out, err, body.str(), meta);
    return finish(fit, err);
}

int cmd_rp(const Options& o, std::ostream& out, std::ostream& err) {
    const std::vector<double> alphas = parse_alphas(o.alphas.empty() ? "10,25,50,75,90" : o.alphas);
    if (!(o.level > 0.0 && o.level < 1.0)) throw ConfigError("--level must lie in (0, 1)");
    const FitResult fit = obtain_fit(o, err);
    if (fit.curves.size() < 2) throw ConfigError("relative potency needs two curves; the fit has one");
    const EdMethod method = o.method.empty() ? default_method(fit) : ed_method_from_string(o.method);

    std::vector<std::pair<std::string, std::string>> pairs;
    if (!o.numerator.empty() || !o.denominator.empty()) {
        if (o.numerator.empty() || o.denominator.empty()) throw ConfigError("give both --numerator and --denominator");
        pairs.emplace_back(o.numerator, o.denominator);
    } else {
        for (std::size_t k = 1; k < fit.curves.size(); ++k) pairs.emplace_back(fit.curves[k], fit.curves.front());
    }
    std::vector<RelativePotency> rows;
    for (const auto& [a, b] : pairs) {
        for (const double alpha : alphas) {
            rows.push_back(relative_potency(fit, a, b, alpha, method, o.quad_points, o.level, o.log_ci));
        }
    }
    const json meta = metadata("rp", to_string(fit.estimator), o.quad_points, o.seed);
    std::ostringstream body;
    if (o.format == "json") {
        json list = json::array();
        for (const auto& r : rows) {
            list.push_back({{"numerator_curve", r.numerator_curve}, {"denominator_curve", r.denominator_curve},
                            {"alpha", std::round(r.alpha * 1e11) / 1e9}, {"estimate", r.estimate},
                            {"std_error", r.std_error}, {"ci_lower", r.ci_lower}, {"ci_upper", r.ci_upper},
                            {"level", r.level}});
        }
        body << json{{"metadata", meta}, {"method", to_string(method)}, {"rows", list}}.dump(2) << '\n';
    } else {
        write_rp_csv(body, rows);
    }
    emit(o, out, err, body.str(), meta);
    return finish(fit, err);
}

int cmd_predict(const Options& o, std::ostream& out, std::ostream& err) {
    const FitResult fit = obtain_fit(o, err);
    std::set<CurveKind> which;
    const std::string which_text =
        !o.which.empty() ? o.which
                         : (fit.estimator == Estimator::NLME ? "conditional,marginalized,cluster" : "conditional");
    for (const auto& name : split(which_text)) {
        if (name == "conditional") {
            which.insert(CurveKind::conditional);
        } else if (name == "marginalized") {
            which.insert(CurveKind::marginalized);
        } else if (name == "cluster" || name == "cluster_specific") {
            which.insert(CurveKind::cluster_specific);
        } else {
            throw ConfigError("--which: unknown series '" + name + "'");
        }
    }
    std::vector<double> doses;
    if (!o.doses.empty()) {
        for (const auto& item : split(o.doses)) doses.push_back(parse_number("--doses", item));
    } else {
        doses = default_dose_grid(fit, o.grid_points);
    }
    std::vector<PredictionRow> rows;
    const std::vector<std::string> curves = o.curve.empty() ? fit.curves : std::vector<std::string>{o.curve};
    for (const auto& curve : curves) {
        const auto part = predict_curves(fit, curve, doses, which, o.quad_points);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    const json meta = metadata("predict", to_string(fit.estimator), o.quad_points, o.seed);
    std::ostringstream body;
    if (o.format == "json") {
        json list = json::array();
        for (const auto& r : rows) list.push_back({{"dose", r.dose}, {"series_label", r.series_label}, {"value", r.value}});
        body << json{{"metadata", meta}, {"rows", list}}.dump(2) << '\n';
    } else {
        write_prediction_csv(body, rows);
    }
    emit(o, out, err, body.str(), meta);
    return finish(fit, err);
}

int cmd_simulate(const Options& o, std::ostream& out, std::ostream& err) {
    Scenario scenario = o.config.empty() ? Scenario::reference() : load_scenario(std::filesystem::path(o.config));
    if (!o.correlation.empty()) {
        if (o.correlation == "diagonal" || o.correlation == "diag") {
            scenario.structure = CovarianceStructure::diagonal;
            scenario.correlation = Eigen::MatrixXd::Identity(scenario.correlation.rows(), scenario.correlation.cols());
        } else if (o.correlation == "unstructured" || o.correlation == "un") {
            const Scenario reference = Scenario::reference();
            if (scenario.structure == CovarianceStructure::diagonal) {
                if (scenario.random_parameters != reference.random_parameters) {
                    throw ConfigError("--correlation unstructured needs correlation_matrix in the scenario file");
                }
                scenario.correlation = reference.correlation;
            }
            scenario.structure = CovarianceStructure::unstructured;
        } else {
            throw ConfigError("--correlation must be unstructured or diagonal");
        }
    }
    if (o.sigma_e_scale) scenario.sigma_e_scale = *o.sigma_e_scale;
    scenario.validate();

    StudyOptions study;
    study.m_list.clear();
    for (const auto& item : split(o.m_list)) {
        const double m = parse_number("--m", item);
        if (m < 2 || m != std::floor(m)) throw ConfigError("--m: cluster counts must be integers >= 2");
        study.m_list.push_back(static_cast<int>(m));
    }
    if (o.replicates < 1) throw ConfigError("--replicates must be at least 1");
    study.replicates = o.replicates;
    study.alphas = parse_alphas(o.alphas.empty() ? "10,50,90" : o.alphas);
    study.estimators.clear();
    for (const auto& name : split(o.estimators)) study.estimators.push_back(study_estimator_from_string(name));
    if (o.mc_samples < 1000) throw ConfigError("--mc-samples must be at least 1000");
    study.truth_samples = o.mc_samples;
    study.quad_points = o.quad_points;
    study.seed = o.seed;
    study.threads = o.threads;
    std::size_t last_percent = 101;
    study.progress = [&](std::size_t done, std::size_t total) {
        const std::size_t percent = 100 * done / total;
        if (percent / 10 != last_percent / 10 || done == total) {
            last_percent = percent;
            err << "simulate: " << done << '/' << total << " replicates\n";
        }
    };
    const StudySummary summary = run_study(scenario, study);

    json meta = metadata("simulate", o.estimators, o.quad_points, o.seed);
    meta["replicates"] = o.replicates;
    meta["mc_samples"] = o.mc_samples;
    meta["correlation"] = scenario.structure == CovarianceStructure::diagonal ? "diagonal" : "unstructured";
    meta["sigma_e_scale"] = scenario.sigma_e_scale;
    std::ostringstream body;
    if (o.format == "json") {
        json cells = json::array();
        for (const auto& c : summary.cells) {
            cells.push_back({{"m", c.m}, {"estimator", to_string(c.estimator)}, {"method", to_string(c.method)},
                             {"alpha", std::round(c.alpha * 1e11) / 1e9}, {"median_deviation", c.median_deviation},
                             {"median_se", c.median_se}, {"n_converged", c.n_converged}, {"n_failed", c.n_failed}});
        }
        json truth = json::object();
        for (std::size_t a = 0; a < summary.alphas.size(); ++a) {
            truth[format_double(std::round(summary.alphas[a] * 1e11) / 1e9)] = summary.truth[a];
        }
        body << json{{"metadata", meta}, {"true_ed", truth}, {"cells", cells}}.dump(2) << '\n';
    } else {
        summary_to_csv(summary, body);
    }
    emit(o, out, err, body.str(), meta);
    int failures = 0;
    for (const auto& c : summary.cells) failures += c.n_failed;
    if (failures > 0) err << "simulate: " << failures << " failed estimates across all cells (see n_failed)\n";
    return exit_ok;
}

void add_model_flags(CLI::App* sub, Options& o) {
    sub->add_option("--model", o.model, "LL3, LL4 or LL5")->check(CLI::IsMember({"LL3", "LL4", "LL5", "ll3", "ll4", "ll5"}));
    sub->add_option("--estimator", o.estimator, "nls, gnls or nlme")->check(CLI::IsMember({"nls", "gnls", "nlme"}));
    sub->add_option("--random", o.random, "parameters with random effects, e.g. b,d,e");
    sub->add_option("--re-cov", o.re_cov, "random-effects covariance: diag or un");
    sub->add_option("--shared", o.shared, "parameters shared across curves (default: none)");
    sub->add_option("--data", o.data, "input CSV with dose,response,cluster[,curve]");
}

void add_output_flags(CLI::App* sub, Options& o) {
    sub->add_option("--out", o.out, "output path (default: standard output)");
    sub->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Marginalized effective doses from clustered dose-response data", "medose"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    auto* fit = app.add_subcommand("fit", "fit a model and write the fit as JSON");
    add_model_flags(fit, o);
    fit->add_option("--out", o.out, "fit JSON path (default: standard output)");
    fit->add_option("--seed", o.seed, "recorded in the metadata");

    for (const char* name : {"ed", "rp", "predict"}) {
        auto* sub = app.add_subcommand(name, std::string(name) == "ed"   ? "effective-dose table"
                                             : std::string(name) == "rp" ? "relative potencies"
                                                                         : "fitted curves on a dose grid");
        add_model_flags(sub, o);
        add_output_flags(sub, o);
        sub->add_option("--fit", o.fit, "stored fit JSON");
        sub->add_option("--quad-points", o.quad_points, "Gauss-Hermite points per dimension")->check(CLI::Range(1, 100));
        sub->add_option("--seed", o.seed, "recorded in the metadata");
        if (std::string(name) != "predict") {
            sub->add_option("--alphas", o.alphas, "percents, default 10,25,50,75,90");
            sub->add_option("--method", o.method, "conditional, marginalized or marginal")
                ->check(CLI::IsMember({"conditional", "marginalized", "marginal"}));
        }
        if (std::string(name) == "rp") {
            sub->add_option("--level", o.level, "confidence level");
            sub->add_flag("--log-ci", o.log_ci, "Wald interval on the log ratio");
            sub->add_option("--numerator", o.numerator, "numerator curve");
            sub->add_option("--denominator", o.denominator, "denominator curve");
        }
        if (std::string(name) == "predict") {
            sub->add_option("--which", o.which, "conditional,marginalized,cluster");
            sub->add_option("--doses", o.doses, "explicit dose grid");
            sub->add_option("--grid-points", o.grid_points, "log-spaced grid size")->check(CLI::PositiveNumber);
            sub->add_option("--curve", o.curve, "curve to predict (default: all)");
        }
    }

    auto* sim = app.add_subcommand("simulate", "simulation study summary");
    add_output_flags(sim, o);
    sim->add_option("--config", o.config, "scenario file (key = value)");
    sim->add_option("--m", o.m_list, "cluster counts, default 2,5,10,20");
    sim->add_option("--replicates", o.replicates, "replicates per cluster count");
    sim->add_option("--alphas", o.alphas, "percents, default 10,50,90");
    sim->add_option("--estimators", o.estimators, "nls,gnls,nlme_un,nlme_diag");
    sim->add_option("--correlation", o.correlation, "unstructured or diagonal");
    sim->add_option("--sigma-e-scale", o.sigma_e_scale, "multiplier on the SD of the random effect on e");
    sim->add_option("--mc-samples", o.mc_samples, "Monte Carlo samples for the true effective doses");
    sim->add_option("--quad-points", o.quad_points, "Gauss-Hermite points per dimension")->check(CLI::Range(1, 100));
    sim->add_option("--seed", o.seed, "master seed");
    sim->add_option("--threads", o.threads, "worker threads (default: MEDOSE_THREADS or all cores)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        if (fit->parsed()) return cmd_fit(o, out, err);
        if (app.got_subcommand("ed")) return cmd_ed(o, out, err);
        if (app.got_subcommand("rp")) return cmd_rp(o, out, err);
        if (app.got_subcommand("predict")) return cmd_predict(o, out, err);
        return cmd_simulate(o, out, err);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return exit_config;
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_numeric;
    }
}

}  // namespace medose::cli

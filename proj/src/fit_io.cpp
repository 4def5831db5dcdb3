#include "medose/fit_io.hpp"

#include <fstream>

namespace medose {

using nlohmann::json;

Estimator estimator_from_string(const std::string& name) {
    if (name == "NLS" || name == "nls") return Estimator::NLS;
    if (name == "GNLS" || name == "gnls") return Estimator::GNLS;
    if (name == "NLME" || name == "nlme") return Estimator::NLME;
    throw Error(ErrorKind::invalid_parameter, "unknown estimator '" + name + "'");
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& doc) {
    if (!doc.is_array()) throw Error(ErrorKind::schema, "matrix must be an array of rows");
    const Eigen::Index rows = static_cast<Eigen::Index>(doc.size());
    const Eigen::Index cols = rows ? static_cast<Eigen::Index>(doc[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (!doc[i].is_array() || static_cast<Eigen::Index>(doc[i].size()) != cols) {
            throw Error(ErrorKind::schema, "matrix rows must be arrays of equal length");
        }
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = doc[i][j].get<double>();
    }
    return m;
}

namespace {

json vector_to_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from_json(const json& doc) {
    const auto values = doc.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::string param_string(Param p) { return std::string(1, to_char(p)); }

Param param_from_json(const json& doc) {
    const auto name = doc.get<std::string>();
    const auto p = name.size() == 1 ? param_from_char(name[0]) : std::nullopt;
    if (!p) throw Error(ErrorKind::schema, "unknown parameter name '" + name + "'");
    return *p;
}

const json& field(const json& doc, const char* name) {
    const auto it = doc.find(name);
    if (it == doc.end()) throw Error(ErrorKind::schema, std::string("fit document lacks field '") + name + "'");
    return *it;
}

}  // namespace

json to_json(const FitResult& fit) {
    json doc;
    doc["estimator"] = to_string(fit.estimator);
    doc["family"] = to_string(fit.family);
    json fixed = json::object();
    for (Param p : parameter_names(fit.family)) {
        fixed[param_string(p)] = fit.fixed_spec.of(p) == Sharing::separate_per_curve ? "separate" : "shared";
    }
    doc["fixed_spec"] = fixed;
    if (fit.random_spec) {
        json params = json::array();
        for (Param p : fit.random_spec->random_parameters) params.push_back(param_string(p));
        doc["random_spec"] = {
            {"random_parameters", params},
            {"covariance_structure",
             fit.random_spec->covariance_structure == CovarianceStructure::diagonal ? "diagonal" : "unstructured"}};
    } else {
        doc["random_spec"] = nullptr;
    }
    doc["curves"] = fit.curves;
    doc["fixed_names"] = fit.fixed_names;
    doc["beta_hat"] = vector_to_json(fit.beta_hat);
    doc["vcov_beta"] = matrix_to_json(fit.vcov_beta);
    doc["omega_hat"] = matrix_to_json(fit.omega_hat);
    doc["sigma_hat"] = fit.sigma_hat;
    doc["rho_hat"] = fit.rho_hat ? json(*fit.rho_hat) : json(nullptr);
    doc["rho_at_boundary"] = fit.rho_at_boundary;
    doc["loglik"] = fit.loglik;
    doc["converged"] = fit.converged;
    doc["iterations"] = fit.iterations;
    json clusters = json::array();
    for (const auto& c : fit.clusters) {
        json entry = {{"id", c.id}, {"curves", c.curves}};
        if (c.eblup.size() > 0) entry["eblup"] = vector_to_json(c.eblup);
        clusters.push_back(std::move(entry));
    }
    doc["clusters"] = clusters;
    doc["n_obs"] = fit.n_obs;
    doc["dose_min_positive"] = fit.dose_min_positive;
    doc["dose_max"] = fit.dose_max;
    doc["has_zero_dose"] = fit.has_zero_dose;
    return doc;
}

FitResult fit_from_json(const json& doc) {
    try {
        FitResult fit;
        fit.estimator = estimator_from_string(field(doc, "estimator").get<std::string>());
        fit.family = family_from_string(field(doc, "family").get<std::string>());
        for (const auto& [name, value] : field(doc, "fixed_spec").items()) {
            const Param p = param_from_json(json(name));
            const auto sharing = value.get<std::string>();
            if (sharing != "shared" && sharing != "separate") {
                throw Error(ErrorKind::schema, "sharing must be 'shared' or 'separate'");
            }
            if (sharing == "separate") fit.fixed_spec.sharing[p] = Sharing::separate_per_curve;
        }
        const json& random = field(doc, "random_spec");
        if (!random.is_null()) {
            RandomEffectsSpec spec;
            for (const auto& p : field(random, "random_parameters")) spec.random_parameters.push_back(param_from_json(p));
            const auto structure = field(random, "covariance_structure").get<std::string>();
            if (structure != "diagonal" && structure != "unstructured") {
                throw Error(ErrorKind::schema, "covariance_structure must be 'diagonal' or 'unstructured'");
            }
            spec.covariance_structure =
                structure == "diagonal" ? CovarianceStructure::diagonal : CovarianceStructure::unstructured;
            fit.random_spec = spec;
        }
        fit.curves = field(doc, "curves").get<std::vector<std::string>>();
        fit.beta_hat = vector_from_json(field(doc, "beta_hat"));
        fit.vcov_beta = matrix_from_json(field(doc, "vcov_beta"));
        fit.omega_hat = matrix_from_json(field(doc, "omega_hat"));
        fit.sigma_hat = field(doc, "sigma_hat").get<double>();
        const json& rho = field(doc, "rho_hat");
        if (!rho.is_null()) fit.rho_hat = rho.get<double>();
        fit.rho_at_boundary = doc.value("rho_at_boundary", false);
        fit.loglik = field(doc, "loglik").get<double>();
        fit.converged = field(doc, "converged").get<bool>();
        fit.iterations = field(doc, "iterations").get<int>();
        if (doc.contains("clusters")) {
            for (const auto& entry : doc["clusters"]) {
                ClusterInfo info;
                info.id = field(entry, "id").get<std::string>();
                info.curves = entry.value("curves", std::vector<std::string>{});
                if (entry.contains("eblup")) info.eblup = vector_from_json(entry["eblup"]);
                fit.clusters.push_back(std::move(info));
            }
        }
        fit.n_obs = doc.value("n_obs", std::size_t{0});
        fit.dose_min_positive = doc.value("dose_min_positive", 0.0);
        fit.dose_max = doc.value("dose_max", 0.0);
        fit.has_zero_dose = doc.value("has_zero_dose", false);

        const FixedLayout layout = fit.layout();
        fit.fixed_names = layout.names();
        const auto p = static_cast<Eigen::Index>(layout.size());
        if (fit.beta_hat.size() != p || fit.vcov_beta.rows() != p || fit.vcov_beta.cols() != p) {
            throw Error(ErrorKind::schema, "beta_hat/vcov_beta do not match the fixed-effects layout");
        }
        const auto q = static_cast<Eigen::Index>(fit.random_positions().size());
        if (fit.omega_hat.rows() != q || fit.omega_hat.cols() != q) {
            throw Error(ErrorKind::schema, "omega_hat does not match the random-effects specification");
        }
        return fit;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::schema, std::string("malformed fit document: ") + e.what());
    }
}

void save_fit(const FitResult& fit, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
    out << to_json(fit).dump(2) << '\n';
    if (!out) throw Error(ErrorKind::io, "write failed for '" + path.string() + "'");
}

FitResult load_fit(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open fit file '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, "'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return fit_from_json(doc);
}

}  // namespace medose

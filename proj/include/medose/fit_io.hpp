#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "medose/estimators.hpp"

namespace medose {

Estimator estimator_from_string(const std::string& name);

/// Matrices are row-major nested arrays. Round trips exactly: doubles are
/// written with enough digits to reproduce every bit.
nlohmann::json to_json(const FitResult& fit);
/// Throws ErrorKind::schema on missing or mistyped fields.
FitResult fit_from_json(const nlohmann::json& doc);

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& doc);

void save_fit(const FitResult& fit, const std::filesystem::path& path);
FitResult load_fit(const std::filesystem::path& path);

}  // namespace medose

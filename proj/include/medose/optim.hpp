#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>

namespace medose {

using ResidualFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using ScalarFunction = std::function<double(const Eigen::VectorXd&)>;

struct LeastSquaresOptions {
    int max_iterations = 200;
    double relative_rss_tolerance = 1e-10;
    double gradient_tolerance = 1e-8;
};

struct LeastSquaresResult {
    Eigen::VectorXd x;
    Eigen::VectorXd residuals;
    double rss = 0.0;
    bool converged = false;
    int iterations = 0;
};

/// Minimizes the residual sum of squares by Levenberg-Marquardt with
/// Marquardt diagonal scaling and a central-difference Jacobian.
LeastSquaresResult levenberg_marquardt(const ResidualFunction& residuals, Eigen::VectorXd x0,
                                       const LeastSquaresOptions& options = {});

/// Central-difference Jacobian of a vector function.
Eigen::MatrixXd numeric_jacobian(const ResidualFunction& fn, const Eigen::VectorXd& x);

Eigen::VectorXd numeric_gradient(const ScalarFunction& fn, const Eigen::VectorXd& x);

/// Symmetric finite-difference Hessian with steps eps^(1/4) * max(1, |x_k|).
Eigen::MatrixXd numeric_hessian(const ScalarFunction& fn, const Eigen::VectorXd& x);

struct QuasiNewtonOptions {
    int max_iterations = 500;
    /// on max_k |g_k| max(1, |x_k|) / max(1, |f|)
    double relative_gradient_tolerance = 1e-6;
    double max_step = 5.0;
};

struct MinimizeResult {
    Eigen::VectorXd x;
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
};

/// BFGS with backtracking line search and central-difference gradients.
/// `initial_hessian`, when given and positive definite, seeds the inverse
/// Hessian approximation.
MinimizeResult minimize_bfgs(const ScalarFunction& fn, Eigen::VectorXd x0,
                             const QuasiNewtonOptions& options = {},
                             const std::optional<Eigen::MatrixXd>& initial_hessian = std::nullopt);

double relative_gradient(const Eigen::VectorXd& gradient, const Eigen::VectorXd& x, double value);

struct ScalarMinimum {
    double x = 0.0;
    double value = 0.0;
    int iterations = 0;
};

/// Minimizes a function of one variable on [lo, hi] (Brent).
ScalarMinimum minimize_scalar(const std::function<double(double)>& fn, double lo, double hi);

}  // namespace medose

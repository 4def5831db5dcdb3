#include "medose/optim.hpp"

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <limits>

#include "medose/models.hpp"

namespace medose {

Eigen::MatrixXd numeric_jacobian(const ResidualFunction& fn, const Eigen::VectorXd& x) {
    Eigen::VectorXd work = x;
    Eigen::MatrixXd jac;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = central_step(x(k));
        work(k) = x(k) + h;
        const Eigen::VectorXd up = fn(work);
        work(k) = x(k) - h;
        const Eigen::VectorXd down = fn(work);
        work(k) = x(k);
        if (k == 0) jac.resize(up.size(), x.size());
        jac.col(k) = (up - down) / (2.0 * h);
    }
    return jac;
}

Eigen::VectorXd numeric_gradient(const ScalarFunction& fn, const Eigen::VectorXd& x) {
    Eigen::VectorXd work = x;
    Eigen::VectorXd grad(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = central_step(x(k));
        work(k) = x(k) + h;
        const double up = fn(work);
        work(k) = x(k) - h;
        const double down = fn(work);
        work(k) = x(k);
        grad(k) = (up - down) / (2.0 * h);
    }
    return grad;
}

Eigen::MatrixXd numeric_hessian(const ScalarFunction& fn, const Eigen::VectorXd& x) {
    const Eigen::Index n = x.size();
    const double base = std::pow(std::numeric_limits<double>::epsilon(), 0.25);
    Eigen::VectorXd h(n);
    for (Eigen::Index k = 0; k < n; ++k) h(k) = base * std::max(1.0, std::abs(x(k)));
    const double f0 = fn(x);
    Eigen::MatrixXd hess(n, n);
    Eigen::VectorXd work = x;
    for (Eigen::Index i = 0; i < n; ++i) {
        work(i) = x(i) + h(i);
        const double up = fn(work);
        work(i) = x(i) - h(i);
        const double down = fn(work);
        work(i) = x(i);
        hess(i, i) = (up - 2.0 * f0 + down) / (h(i) * h(i));
        for (Eigen::Index j = 0; j < i; ++j) {
            double acc = 0.0;
            for (int si : {1, -1}) {
                for (int sj : {1, -1}) {
                    work(i) = x(i) + si * h(i);
                    work(j) = x(j) + sj * h(j);
                    acc += si * sj * fn(work);
                }
            }
            work(i) = x(i);
            work(j) = x(j);
            hess(i, j) = hess(j, i) = acc / (4.0 * h(i) * h(j));
        }
    }
    return hess;
}

LeastSquaresResult levenberg_marquardt(const ResidualFunction& residuals, Eigen::VectorXd x0,
                                       const LeastSquaresOptions& options) {
    LeastSquaresResult out;
    out.x = std::move(x0);
    out.residuals = residuals(out.x);
    out.rss = out.residuals.squaredNorm();
    if (!std::isfinite(out.rss)) {
        out.converged = false;
        return out;
    }
    double lambda = 1e-3;
    for (out.iterations = 0; out.iterations < options.max_iterations; ++out.iterations) {
        const Eigen::MatrixXd jac = numeric_jacobian(residuals, out.x);
        const Eigen::VectorXd grad = jac.transpose() * out.residuals;
        if (grad.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
            out.converged = true;
            return out;
        }
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        Eigen::VectorXd diag = jtj.diagonal().cwiseMax(1e-12 * std::max(1.0, jtj.diagonal().maxCoeff()));
        // decrease promised by a full Gauss-Newton step, relative to the RSS
        Eigen::MatrixXd regularized = jtj;
        regularized.diagonal() += 1e-12 * diag;
        const double predicted = grad.dot(regularized.ldlt().solve(grad)) / std::max(out.rss, 1e-300);
        if (std::isfinite(predicted) && predicted < options.relative_rss_tolerance) {
            out.converged = true;
            return out;
        }
        bool accepted = false;
        while (lambda < 1e16) {
            Eigen::MatrixXd system = jtj;
            system.diagonal() += lambda * diag;
            const Eigen::VectorXd step = system.ldlt().solve(-grad);
            const Eigen::VectorXd trial = out.x + step;
            const Eigen::VectorXd trial_res = residuals(trial);
            const double trial_rss = trial_res.squaredNorm();
            if (step.allFinite() && std::isfinite(trial_rss) && trial_rss < out.rss) {
                const double decrease = (out.rss - trial_rss) / out.rss;
                out.x = trial;
                out.residuals = trial_res;
                out.rss = trial_rss;
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
                if (decrease < options.relative_rss_tolerance) {
                    out.converged = true;
                    ++out.iterations;
                    return out;
                }
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted) {
            // no descent is possible at machine precision: accept when the
            // residuals vanish or the promised decrease is at rounding level
            out.converged = out.rss <= 1e-28 * std::max(1.0, static_cast<double>(out.residuals.size())) ||
                            (std::isfinite(predicted) && predicted < 1e-6);
            return out;
        }
    }
    out.converged = false;
    return out;
}

double relative_gradient(const Eigen::VectorXd& gradient, const Eigen::VectorXd& x, double value) {
    double worst = 0.0;
    const double scale = std::max(1.0, std::abs(value));
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        worst = std::max(worst, std::abs(gradient(k)) * std::max(1.0, std::abs(x(k))) / scale);
    }
    return worst;
}

namespace {

// When no descent step exists, the gradient may be pure finite-difference
// noise around a sharp minimum. Accept the point when the Newton decrement
// over the curved directions promises less than 1e-6 relative gain and the
// slope along flat directions (e.g. a variance at its boundary) is as small.
bool stalled_at_minimum(const ScalarFunction& fn, const Eigen::VectorXd& x, const Eigen::VectorXd& grad,
                        double value) {
    const Eigen::MatrixXd h = numeric_hessian(fn, x);
    if (!h.allFinite()) return false;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (h + h.transpose()));
    if (eig.info() != Eigen::Success) return false;
    const double tolerance = 1e-6 * std::max(1.0, std::abs(value));
    const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
    double decrement = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double lambda = eig.eigenvalues()(k);
        const double slope = eig.eigenvectors().col(k).dot(grad);
        if (lambda > 1e-8 * top) {
            decrement += slope * slope / lambda;
        } else if (lambda < -1e-6 * top || std::abs(slope) > tolerance) {
            return false;
        }
    }
    return 0.5 * decrement < tolerance;
}

}  // namespace

MinimizeResult minimize_bfgs(const ScalarFunction& fn, Eigen::VectorXd x0, const QuasiNewtonOptions& options,
                             const std::optional<Eigen::MatrixXd>& initial_hessian) {
    const Eigen::Index n = x0.size();
    MinimizeResult out;
    out.x = std::move(x0);
    out.value = fn(out.x);
    if (!std::isfinite(out.value)) return out;

    Eigen::MatrixXd inv_h = Eigen::MatrixXd::Identity(n, n);
    if (initial_hessian) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(*initial_hessian);
        if (eig.info() == Eigen::Success) {
            const Eigen::VectorXd lam = eig.eigenvalues();
            const double top = lam.cwiseAbs().maxCoeff();
            if (top > 0.0) {
                const Eigen::VectorXd fixed = lam.cwiseAbs().cwiseMax(1e-6 * top);
                inv_h = eig.eigenvectors() * fixed.cwiseInverse().asDiagonal() *
                        eig.eigenvectors().transpose();
            }
        }
    }

    Eigen::VectorXd grad = numeric_gradient(fn, out.x);
    for (out.iterations = 0; out.iterations < options.max_iterations; ++out.iterations) {
        if (!grad.allFinite()) return out;
        if (relative_gradient(grad, out.x, out.value) < options.relative_gradient_tolerance) {
            out.converged = true;
            return out;
        }
        Eigen::VectorXd dir = -inv_h * grad;
        if (grad.dot(dir) >= 0.0) {
            inv_h.setIdentity();
            dir = -grad;
        }
        const double len = dir.norm();
        if (len > options.max_step) dir *= options.max_step / len;

        const double slope = grad.dot(dir);
        double t = 1.0;
        Eigen::VectorXd trial;
        double trial_value = 0.0;
        bool found = false;
        for (int k = 0; k < 40; ++k, t *= 0.5) {
            trial = out.x + t * dir;
            trial_value = fn(trial);
            if (std::isfinite(trial_value) && trial_value <= out.value + 1e-4 * t * slope) {
                found = true;
                break;
            }
        }
        if (!found) {
            if (inv_h.isIdentity()) {
                out.converged = stalled_at_minimum(fn, out.x, grad, out.value);
                return out;
            }
            inv_h.setIdentity();
            continue;
        }
        const Eigen::VectorXd new_grad = numeric_gradient(fn, trial);
        const Eigen::VectorXd s = trial - out.x;
        const Eigen::VectorXd y = new_grad - grad;
        const double sy = s.dot(y);
        if (out.iterations == 0 && !initial_hessian && sy > 0.0) {
            inv_h *= sy / y.squaredNorm();
        }
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
            inv_h = (eye - rho * s * y.transpose()) * inv_h * (eye - rho * y * s.transpose()) +
                    rho * s * s.transpose();
        }
        out.x = trial;
        out.value = trial_value;
        grad = new_grad;
    }
    out.converged = relative_gradient(grad, out.x, out.value) < options.relative_gradient_tolerance;
    return out;
}

ScalarMinimum minimize_scalar(const std::function<double(double)>& fn, double lo, double hi) {
    std::uintmax_t iterations = 200;
    const auto [x, value] = boost::math::tools::brent_find_minima(fn, lo, hi, 40, iterations);
    return {x, value, static_cast<int>(iterations)};
}

}  // namespace medose

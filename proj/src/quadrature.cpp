#include "medose/quadrature.hpp"

#include <cmath>
#include <string>

namespace medose {

QuadratureGrid build_grid(int points_per_dim, int dimension) {
    if (points_per_dim < 1 || dimension < 1) {
        throw Error(ErrorKind::domain, "quadrature grid needs N >= 1 and p >= 1");
    }
    const double total = std::pow(static_cast<double>(points_per_dim), dimension);
    if (total > kMaxGridPoints) {
        throw Error(ErrorKind::resource, "quadrature grid of " + std::to_string(points_per_dim) + "^" +
                                             std::to_string(dimension) +
                                             " points exceeds 10^6; use fewer points per dimension");
    }
    const auto [x, w] = gauss_hermite_1d<double>(points_per_dim);
    const auto count = static_cast<Eigen::Index>(total);
    QuadratureGrid grid;
    grid.points_per_dim = points_per_dim;
    grid.dimension = dimension;
    grid.nodes.resize(dimension, count);
    grid.weights.resize(count);
    std::vector<int> digit(dimension, 0);
    for (Eigen::Index col = 0; col < count; ++col) {
        double weight = 1.0;
        for (int r = 0; r < dimension; ++r) {
            grid.nodes(r, col) = x(digit[r]);
            weight *= w(digit[r]);
        }
        grid.weights(col) = weight;
        for (int r = dimension - 1; r >= 0; --r) {
            if (++digit[r] < points_per_dim) break;
            digit[r] = 0;
        }
    }
    return grid;
}

Eigen::MatrixXd psd_cholesky(const Eigen::MatrixXd& g) {
    if (g.rows() != g.cols()) throw Error(ErrorKind::domain, "covariance must be square");
    const Eigen::Index p = g.rows();
    if (p == 0) return g;
    if (!g.allFinite()) throw Error(ErrorKind::domain, "covariance has non-finite entries");
    if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
        throw Error(ErrorKind::domain, "covariance is not symmetric");
    }
    const Eigen::MatrixXd sym = 0.5 * (g + g.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10) {
        throw Error(ErrorKind::domain, "covariance is not positive semidefinite");
    }
    const double tol = 1e-14 * std::max(1.0, sym.diagonal().maxCoeff());
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double pivot = sym(j, j) - l.row(j).head(j).squaredNorm();
        if (pivot <= tol) continue;
        l(j, j) = std::sqrt(pivot);
        for (Eigen::Index i = j + 1; i < p; ++i) {
            l(i, j) = (sym(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
        }
    }
    return l;
}

Eigen::MatrixXd transform_nodes_by_factor(const QuadratureGrid& grid, const Eigen::MatrixXd& omega) {
    if (omega.rows() != grid.dimension || omega.cols() != grid.dimension) {
        throw Error(ErrorKind::domain, "covariance dimension does not match the quadrature grid");
    }
    return (omega * grid.nodes).transpose();
}

Eigen::MatrixXd transform_nodes(const QuadratureGrid& grid, const Eigen::MatrixXd& covariance) {
    return transform_nodes_by_factor(grid, psd_cholesky(covariance));
}

}  // namespace medose

#pragma once

#include <Eigen/Dense>

#include <utility>

#include "medose/errors.hpp"

namespace medose {

/// Probabilists' Gauss-Hermite rule: nodes ascending, weights summing to one,
/// exact for polynomials of degree <= 2n - 1 against the standard normal
/// density. Golub-Welsch: eigen-decomposition of the Jacobi matrix of the
/// recurrence He_{k+1}(x) = x He_k(x) - k He_{k-1}(x).
template <typename Scalar = double>
std::pair<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>
gauss_hermite_1d(int n) {
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    if (n < 1) throw Error(ErrorKind::domain, "Gauss-Hermite rule needs at least one node");
    Matrix jacobi = Matrix::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(Scalar(k));
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
    Vector nodes = eig.eigenvalues();
    Vector weights = eig.eigenvectors().row(0).transpose().cwiseAbs2();
    // the rule is symmetric about zero; enforce it exactly
    for (int i = 0; i < n / 2; ++i) {
        const int j = n - 1 - i;
        const Scalar x = (nodes(j) - nodes(i)) / Scalar(2);
        const Scalar w = (weights(i) + weights(j)) / Scalar(2);
        nodes(i) = -x;
        nodes(j) = x;
        weights(i) = weights(j) = w;
    }
    if (n % 2 == 1) nodes(n / 2) = Scalar(0);
    weights /= weights.sum();
    return {nodes, weights};
}

/// Tensor-product rule for a standard p-variate normal.
struct QuadratureGrid {
    int points_per_dim = 0;
    int dimension = 0;
    /// p x N^p, one node per column, last dimension varying fastest.
    Eigen::MatrixXd nodes;
    /// N^p product weights.
    Eigen::VectorXd weights;

    Eigen::Index size() const { return weights.size(); }
};

inline constexpr double kMaxGridPoints = 1e6;

QuadratureGrid build_grid(int points_per_dim, int dimension);

/// Lower-triangular factor L with L L^T = G for symmetric positive
/// semidefinite G; null directions get zero columns.
Eigen::MatrixXd psd_cholesky(const Eigen::MatrixXd& covariance);

/// Nodes mapped onto N(0, G): row n is (Omega * node_n)^T.
Eigen::MatrixXd transform_nodes(const QuadratureGrid& grid, const Eigen::MatrixXd& covariance);

/// Same with a precomputed factor Omega (G = Omega Omega^T).
Eigen::MatrixXd transform_nodes_by_factor(const QuadratureGrid& grid, const Eigen::MatrixXd& omega);

}  // namespace medose

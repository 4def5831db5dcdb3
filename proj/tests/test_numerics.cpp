#include "doctest.h"

#include <set>

#include "medose/inference.hpp"
#include "medose/optim.hpp"
#include "medose/quadrature.hpp"
#include "medose/rng.hpp"

using namespace medose;

TEST_CASE("Philox4x64-10 reference outputs") {
    // values from an independent implementation (numpy.random.Philox)
    const PhiloxCounter zero = philox4x64({0, 0, 0, 0}, {0, 0});
    CHECK(zero[0] == 0x16554d9eca36314cULL);
    CHECK(zero[1] == 0xdb20fe9d672d0fdcULL);
    CHECK(zero[2] == 0xd7e772cee186176bULL);
    CHECK(zero[3] == 0x7e68b68aec7ba23bULL);
    const PhiloxCounter keyed = philox4x64({10, 0, 0, 0}, {3, 5});
    CHECK(keyed[0] == 0x1bcb29a53e142e2dULL);
    CHECK(keyed[1] == 0x481cef0e3ceb2b9aULL);
    CHECK(keyed[2] == 0x35a034dc7a994c3eULL);
    CHECK(keyed[3] == 0xd7273230e443dbfaULL);
}

TEST_CASE("open-interval uniforms") {
    CHECK(to_open_unit(0) > 0.0);
    CHECK(to_open_unit(~std::uint64_t{0}) < 1.0);
}

TEST_CASE("normal stream is random access and reproducible") {
    NormalStream a(42, 3), b(42, 3), other(42, 4);
    std::vector<double> seq;
    for (int k = 0; k < 11; ++k) seq.push_back(a());
    for (int k = 10; k >= 0; --k) CHECK(b.at(k) == seq[k]);
    CHECK(other.at(0) != seq[0]);
    CHECK(a.position() == 11);
}

TEST_CASE("normal stream moments") {
    NormalStream s(7, 0);
    const int n = 200000;
    double m1 = 0.0, m2 = 0.0, m4 = 0.0;
    for (int k = 0; k < n; ++k) {
        const double z = s();
        m1 += z;
        m2 += z * z;
        m4 += z * z * z * z;
    }
    CHECK(std::abs(m1 / n) < 0.01);
    CHECK(std::abs(m2 / n - 1.0) < 0.015);
    CHECK(std::abs(m4 / n - 3.0) < 0.08);
}

TEST_CASE("derived seeds differ") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 20; ++a) {
        for (std::uint64_t b = 0; b < 20; ++b) seen.insert(derive_seed(1, a, b));
    }
    CHECK(seen.size() == 400);
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
}

TEST_CASE("Levenberg-Marquardt solves Rosenbrock") {
    const ResidualFunction rosen = [](const Eigen::VectorXd& x) {
        Eigen::VectorXd r(2);
        r << 10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0);
        return r;
    };
    const LeastSquaresResult res = levenberg_marquardt(rosen, Eigen::Vector2d(-1.2, 1.0));
    CHECK(res.converged);
    CHECK(res.x(0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(res.x(1) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("BFGS and Brent minimize smooth functions") {
    Eigen::Matrix3d a;
    a << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
    const Eigen::Vector3d target(1.0, -2.0, 0.5);
    const ScalarFunction quad = [&](const Eigen::VectorXd& x) {
        const Eigen::VectorXd d = x - target;
        return 0.5 * d.dot(a * d) + 3.0;
    };
    const MinimizeResult res = minimize_bfgs(quad, Eigen::Vector3d::Zero());
    CHECK(res.converged);
    CHECK((res.x - target).norm() < 1e-5);

    const ScalarMinimum m = minimize_scalar([](double x) { return std::cos(x); }, 2.0, 4.5);
    CHECK(m.x == doctest::Approx(M_PI).epsilon(1e-7));
}

TEST_CASE("finite-difference derivatives") {
    const ScalarFunction fn = [](const Eigen::VectorXd& x) { return std::exp(x(0)) * std::sin(x(1)) + x(0) * x(1); };
    const Eigen::Vector2d x(0.3, 1.1);
    const Eigen::VectorXd g = numeric_gradient(fn, x);
    CHECK(g(0) == doctest::Approx(std::exp(0.3) * std::sin(1.1) + 1.1).epsilon(1e-8));
    CHECK(g(1) == doctest::Approx(std::exp(0.3) * std::cos(1.1) + 0.3).epsilon(1e-8));
    const Eigen::MatrixXd h = numeric_hessian(fn, x);
    CHECK(h(0, 1) == doctest::Approx(std::exp(0.3) * std::cos(1.1) + 1.0).epsilon(1e-5));
    CHECK(h(1, 1) == doctest::Approx(-std::exp(0.3) * std::sin(1.1)).epsilon(1e-5));
}

TEST_CASE("Gauss-Hermite nodes and weights match a reference rule") {
    // numpy.polynomial.hermite_e.hermegauss(5), weights normalized to one
    const auto [x, w] = gauss_hermite_1d(5);
    const double nodes[] = {-2.8569700138728056, -1.355626179974266, 0.0, 1.355626179974266, 2.8569700138728056};
    const double weights[] = {0.011257411327720677, 0.22207592200561257, 0.5333333333333335, 0.22207592200561257,
                              0.011257411327720677};
    for (int k = 0; k < 5; ++k) {
        CHECK(x(k) == doctest::Approx(nodes[k]).epsilon(1e-13));
        CHECK(w(k) == doctest::Approx(weights[k]).epsilon(1e-13));
    }
    const auto [one_x, one_w] = gauss_hermite_1d(1);
    CHECK(one_x(0) == 0.0);
    CHECK(one_w(0) == 1.0);
    CHECK_THROWS_AS(gauss_hermite_1d(0), Error);
}

TEST_CASE("Gauss-Hermite is exact to degree 2n - 1") {
    for (int n : {2, 5, 9, 20}) {
        const auto [x, w] = gauss_hermite_1d(n);
        double double_factorial = 1.0;
        for (int k = 0; k <= 2 * n - 1; ++k) {
            const double moment = (w.array() * x.array().pow(k)).sum();
            // odd moments cancel terms of size sum w |x|^k
            const double size = (w.array() * x.array().abs().pow(k)).sum();
            const double exact = k % 2 ? 0.0 : double_factorial;
            if (k % 2 == 0) double_factorial *= (k + 1);
            CHECK(std::abs(moment - exact) <= 1e-9 * std::max(1.0, size));
        }
    }
}

TEST_CASE("tensor grid ordering and size guard") {
    const QuadratureGrid g = build_grid(3, 2);
    CHECK(g.size() == 9);
    CHECK(g.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
    // last dimension varies fastest
    CHECK(g.nodes(0, 0) == g.nodes(0, 1));
    CHECK(g.nodes(1, 0) != g.nodes(1, 1));
    CHECK_THROWS_AS(build_grid(5, 0), Error);
    try {
        build_grid(9, 7);
        FAIL("expected a resource error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::resource);
    }
}

TEST_CASE("semidefinite factor and node transform") {
    Eigen::Matrix3d singular;
    singular << 4, 2, 0, 2, 1, 0, 0, 0, 9;
    const Eigen::MatrixXd l = psd_cholesky(singular);
    CHECK((l * l.transpose() - singular).norm() < 1e-12);
    CHECK(l(1, 1) == 0.0);

    Eigen::Matrix2d indefinite;
    indefinite << 1, 2, 2, 1;
    CHECK_THROWS_AS(psd_cholesky(indefinite), Error);

    Eigen::Matrix2d g;
    g << 2.0, -0.6, -0.6, 0.5;
    const QuadratureGrid grid = build_grid(4, 2);
    const Eigen::MatrixXd xi = transform_nodes(grid, g);
    const Eigen::MatrixXd second = xi.transpose() * grid.weights.asDiagonal() * xi;
    CHECK((second - g).norm() < 1e-12);
    CHECK((grid.weights.transpose() * xi).norm() < 1e-13);
}

TEST_CASE("normal quantile") {
    // scipy.stats.norm.ppf
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK(normal_quantile(0.995) == doctest::Approx(2.5758293035489004).epsilon(1e-12));
    CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-10));
    CHECK(normal_quantile(0.3) == doctest::Approx(-0.5244005127080409).epsilon(1e-12));
    CHECK(normal_quantile(0.5) == 0.0);
    CHECK_THROWS_AS(normal_quantile(1.0), Error);
}

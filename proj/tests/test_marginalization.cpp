#include "doctest.h"

#include "medose/marginalization.hpp"
#include "medose/simulation.hpp"
#include "test_support.hpp"

using namespace medose;
using medose::testing::params;
using medose::testing::synthetic_fit;

namespace {

FitResult reference_fit(CovarianceStructure structure = CovarianceStructure::unstructured) {
    const Scenario s = Scenario::reference(structure);
    return synthetic_fit(Estimator::NLME, ModelFamily::LL3, s.fixed, s.random_parameters, s.omega());
}

}  // namespace

TEST_CASE("zero random variance reproduces the conditional curve") {
    const FitResult fit = synthetic_fit(Estimator::NLME, ModelFamily::LL4, params({1.2, 3.0, 40.0, 2.0}),
                                        {Param::b, Param::e}, Eigen::MatrixXd::Zero(2, 2));
    for (double x : {0.0, 0.1, 2.0, 30.0}) {
        CHECK(marginal_predict(fit, "1", x) == doctest::Approx(evaluate(ModelFamily::LL4, fit.beta_hat, x)).epsilon(1e-12));
    }
    for (double alpha : {0.1, 0.5, 0.9}) {
        CHECK(marginalized_ed(fit, "1", alpha) ==
              doctest::Approx(conditional_ed(ModelFamily::LL4, fit.beta_hat, alpha)).epsilon(1e-8));
    }
}

TEST_CASE("random effects on the asymptotes leave the effective dose unchanged") {
    Eigen::Matrix2d omega;
    omega << 3.0, 0.0, -4.0, 12.0;
    const FitResult fit = synthetic_fit(Estimator::NLME, ModelFamily::LL4, params({1.5, 10.0, 100.0, 2.0}),
                                        {Param::c, Param::d}, omega);
    const Marginalizer m(fit);
    for (double alpha : {0.1, 0.25, 0.5, 0.75, 0.9}) {
        CHECK(m.effective_dose("1", alpha) ==
              doctest::Approx(conditional_ed(ModelFamily::LL4, fit.beta_hat, alpha)).epsilon(1e-8));
    }
    // the population-average curve is the conditional curve itself
    CHECK(m.predict("1", 1.3) == doctest::Approx(evaluate(ModelFamily::LL4, fit.beta_hat, 1.3)).epsilon(1e-12));
}

TEST_CASE("quadrature agrees with adaptive integration in one dimension") {
    // LL3 (5, 2000, 0.5) with a random effect of sd 0.1 on e; reference values
    // from scipy.integrate.quad over the normal density and brentq for the roots
    const FitResult fit = synthetic_fit(Estimator::NLME, ModelFamily::LL3, params({5.0, 2000.0, 0.5}), {Param::e},
                                        Eigen::MatrixXd::Constant(1, 1, 0.1));
    const Marginalizer m(fit, 40);
    CHECK(m.predict("1", 0.3) == doctest::Approx(1771.2700075526636).epsilon(1e-6));
    CHECK(m.predict("1", 0.5) == doctest::Approx(970.8712247434999).epsilon(1e-6));
    CHECK(m.predict("1", 0.7) == doctest::Approx(367.5818084225577).epsilon(1e-6));
    CHECK(m.effective_dose("1", 0.1) == doctest::Approx(0.2896068419268877).epsilon(1e-5));
    CHECK(m.effective_dose("1", 0.5) == doctest::Approx(0.49295562028095086).epsilon(1e-5));
    CHECK(m.effective_dose("1", 0.9) == doctest::Approx(0.8176910955265119).epsilon(1e-5));
}

TEST_CASE("quadrature agrees with Monte Carlo on the reference scenario") {
    const FitResult fit = reference_fit();
    for (double x : {0.05, 0.3, 0.6, 1.5}) {
        const double quad = marginal_predict(fit, "1", x);
        const McPrediction mc = mc_marginal_predict(fit, "1", x, 40000, 99, 1);
        CHECK(std::abs(quad - mc.estimate) < 4.0 * mc.mc_std_error);
        CHECK(mc.seed == 99);
        CHECK(mc.stream == 1);
        CHECK(mc.n_samples == 40000);
    }
}

TEST_CASE("marginalized effective doses increase with alpha") {
    const FitResult fit = reference_fit();
    const Marginalizer m(fit);
    double previous = 0.0;
    for (double alpha : {0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95}) {
        const double ed = m.effective_dose("1", alpha);
        CHECK(ed > previous);
        previous = ed;
    }
    // conditional sign pattern against the population-average curve
    CHECK(conditional_ed(ModelFamily::LL3, fit.beta_hat, 0.1) > m.effective_dose("1", 0.1));
    CHECK(conditional_ed(ModelFamily::LL3, fit.beta_hat, 0.9) < m.effective_dose("1", 0.9));
}

TEST_CASE("root search") {
    const auto curve = [](double x) { return 10.0 / (1.0 + x * x); };
    CHECK(solve_effective_dose(curve, 10.0, 0.0, 0.5, 30.0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(solve_effective_dose(curve, 10.0, 0.0, 0.8, 1e-3) == doctest::Approx(2.0).epsilon(1e-9));
    const auto slow = [](double x) { return x / (x + 1e12); };
    CHECK_THROWS_AS(solve_effective_dose(slow, 0.0, 1.0, 0.5, 1.0), Error);
    try {
        solve_effective_dose(curve, 5.0, 5.0, 0.5, 1.0);
        FAIL("expected a domain error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::domain);
    }
}

TEST_CASE("marginalization needs a mixed-effects fit") {
    const FitResult nls = synthetic_fit(Estimator::NLS, ModelFamily::LL3, params({5.0, 2000.0, 0.5}));
    try {
        Marginalizer m(nls);
        FAIL("expected a method error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::method);
    }
}

TEST_CASE("Monte Carlo effective dose with common random numbers") {
    const Scenario s = Scenario::reference();
    const McEffectiveDose a = mc_marginalized_ed(s.family, s.fixed, s.random_positions(), s.omega(), 0.5, 20000, 5);
    const McEffectiveDose b = mc_marginalized_ed(s.family, s.fixed, s.random_positions(), s.omega(), 0.5, 20000, 5);
    CHECK(a.ed == b.ed);
    CHECK(a.mc_std_error > 0.0);
    const double quad = marginalized_ed(reference_fit(), "1", 0.5);
    CHECK(std::abs(a.ed - quad) < 4.0 * a.mc_std_error);
}

TEST_CASE("delta method") {
    Eigen::Matrix2d v;
    v << 0.5, 0.1, 0.1, 0.3;
    const ScalarFunction linear = [](const Eigen::VectorXd& x) { return 2.0 * x(0) - 3.0 * x(1) + 1.0; };
    const DerivedEstimate est = delta_method(v, linear, Eigen::Vector2d(1.0, 2.0));
    CHECK(est.value == doctest::Approx(-3.0));
    CHECK(est.gradient(0) == doctest::Approx(2.0).epsilon(1e-9));
    const Eigen::Vector2d a(2.0, -3.0);
    CHECK(est.std_error == doctest::Approx(std::sqrt(a.dot(v * a))).epsilon(1e-9));

    const ScalarFunction blows_up = [](const Eigen::VectorXd& x) { return x(1) > 2.0 ? std::nan("") : x(0); };
    try {
        delta_method(v, blows_up, Eigen::Vector2d(1.0, 2.0));
        FAIL("expected an evaluation error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::evaluation);
        CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
    }
}

#include "doctest.h"

#include <random>

#include "medose/models.hpp"
#include "test_support.hpp"

using namespace medose;
using medose::testing::params;

TEST_CASE("curve passes through the midpoint at e") {
    const CurveParams p = params({1.7, 10.0, 90.0, 2.5});
    CHECK(evaluate(ModelFamily::LL4, p, 2.5) == doctest::Approx(50.0).epsilon(1e-14));
}

TEST_CASE("family reductions agree") {
    const CurveParams ll4 = params({2.0, 0.0, 100.0, 3.0});
    const CurveParams ll3 = params({2.0, 100.0, 3.0});
    const CurveParams ll5 = params({2.0, 0.0, 100.0, 3.0, 1.0});
    for (double x : {0.0, 0.01, 0.5, 3.0, 40.0}) {
        CHECK(evaluate(ModelFamily::LL3, ll3, x) == doctest::Approx(evaluate(ModelFamily::LL4, ll4, x)));
        CHECK(evaluate(ModelFamily::LL5, ll5, x) == doctest::Approx(evaluate(ModelFamily::LL4, ll4, x)));
    }
}

TEST_CASE("dose limits follow the sign of b") {
    const CurveParams down = params({1.5, 5.0, 50.0, 1.0});
    const CurveParams up = params({-1.5, 5.0, 50.0, 1.0});
    CHECK(evaluate(ModelFamily::LL4, down, 0.0) == 50.0);
    CHECK(evaluate(ModelFamily::LL4, up, 0.0) == 5.0);
    CHECK(evaluate(ModelFamily::LL4, down, 1e12) == doctest::Approx(5.0));
    CHECK(evaluate(ModelFamily::LL4, down, std::numeric_limits<double>::infinity()) == 5.0);
    const auto [at0, atinf] = asymptotes(ModelFamily::LL4, up);
    CHECK(at0 == 5.0);
    CHECK(atinf == 50.0);
    // far tail stays finite
    CHECK(std::isfinite(evaluate(ModelFamily::LL5, params({40.0, 0.0, 1.0, 1e-3, 0.2}), 1e6)));
}

TEST_CASE("conditional ED closed forms") {
    CHECK(conditional_ed(ModelFamily::LL4, params({2.0, 1.0, 9.0, 0.7}), 0.5) == doctest::Approx(0.7).epsilon(1e-14));
    CHECK(conditional_ed(ModelFamily::LL3, params({5.0, 2000.0, 0.5}), 0.9) ==
          doctest::Approx(0.5 * std::pow(9.0, 0.2)).epsilon(1e-14));
    // increasing curve: same fraction of the way from the dose-0 level
    CHECK(conditional_ed(ModelFamily::LL4, params({-2.0, 1.0, 9.0, 0.7}), 0.5) == doctest::Approx(0.7).epsilon(1e-14));
}

TEST_CASE("conditional ED covers the fraction alpha of the span") {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 200; ++k) {
        const double sign = u(gen) < 0.5 ? -1.0 : 1.0;
        const CurveParams p = params({sign * (0.3 + 4.0 * u(gen)), -5.0 + 10.0 * u(gen), 20.0 + 80.0 * u(gen),
                                      0.01 + 5.0 * u(gen), 0.3 + 2.0 * u(gen)});
        const double alpha = 0.02 + 0.96 * u(gen);
        const double x = conditional_ed(ModelFamily::LL5, p, alpha);
        const auto [at0, atinf] = asymptotes(ModelFamily::LL5, p);
        const double fraction = (evaluate(ModelFamily::LL5, p, x) - at0) / (atinf - at0);
        CHECK(fraction == doctest::Approx(alpha).epsilon(1e-9));
    }
}

TEST_CASE("numeric gradient matches the analytic one") {
    const CurveParams p = params({1.3, 4.0, 70.0, 0.8, 1.4});
    const Eigen::Matrix<double, 5, 1> full = detail::expand(ModelFamily::LL5, p);
    for (double x : {0.05, 0.8, 6.0}) {
        Eigen::Matrix<double, 5, 1> analytic;
        const double value = detail::evaluate_full_gradient(full, std::log(x), analytic);
        CHECK(value == doctest::Approx(evaluate(ModelFamily::LL5, p, x)).epsilon(1e-13));
        const Eigen::VectorXd numeric = gradient_params(ModelFamily::LL5, p, x);
        for (int k = 0; k < 5; ++k) CHECK(numeric(k) == doctest::Approx(analytic(k)).epsilon(1e-6).scale(1.0));
    }
    Eigen::Matrix<double, 5, 1> at_zero;
    CHECK(detail::evaluate_full_gradient(full, -std::numeric_limits<double>::infinity(), at_zero) == 70.0);
    CHECK(at_zero(2) == 1.0);
    CHECK(at_zero.sum() == 1.0);
}

TEST_CASE("invalid parameters and doses are rejected") {
    const auto kind = [](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::resource;
    };
    CHECK(kind([] { evaluate(ModelFamily::LL4, params({0.0, 1.0, 2.0, 1.0}), 1.0); }) == ErrorKind::invalid_parameter);
    CHECK(kind([] { evaluate(ModelFamily::LL4, params({1.0, 1.0, 2.0, -1.0}), 1.0); }) == ErrorKind::invalid_parameter);
    CHECK(kind([] { evaluate(ModelFamily::LL5, params({1.0, 1.0, 2.0, 1.0, 0.0}), 1.0); }) == ErrorKind::invalid_parameter);
    CHECK(kind([] { evaluate(ModelFamily::LL3, params({1.0, 1.0, 2.0, 1.0}), 1.0); }) == ErrorKind::invalid_parameter);
    CHECK(kind([] { evaluate(ModelFamily::LL3, params({1.0, 2.0, 1.0}), -0.1); }) == ErrorKind::domain);
    CHECK(kind([] { conditional_ed(ModelFamily::LL3, params({1.0, 2.0, 1.0}), 1.0); }) == ErrorKind::domain);
    CHECK(kind([] { family_from_string("LL7"); }) == ErrorKind::invalid_parameter);
}

TEST_CASE("names round trip") {
    for (auto family : {ModelFamily::LL3, ModelFamily::LL4, ModelFamily::LL5}) {
        CHECK(family_from_string(to_string(family)) == family);
        CHECK(static_cast<int>(parameter_names(family).size()) == parameter_count(family));
        for (Param p : parameter_names(family)) CHECK(param_from_char(to_char(p)) == p);
    }
    CHECK_FALSE(parameter_position(ModelFamily::LL3, Param::c).has_value());
    CHECK(parameter_position(ModelFamily::LL3, Param::e) == 2);
}

TEST_CASE("self-start lands near the generating curve") {
    const CurveParams truth = params({2.0, 10.0, 100.0, 1.5});
    std::vector<double> doses, responses;
    for (double x : medose::testing::log_doses(0.05, 40.0, 12)) {
        doses.push_back(x);
        responses.push_back(evaluate(ModelFamily::LL4, truth, x));
    }
    const CurveParams start = self_start(ModelFamily::LL4, doses, responses);
    CHECK(start(0) > 0.0);
    CHECK(start(3) == doctest::Approx(1.5).epsilon(0.5));

    const std::vector<double> flat_doses{1.0, 1.0, 1.0};
    const std::vector<double> flat{2.0, 2.0, 2.0};
    CHECK_THROWS_AS(self_start(ModelFamily::LL4, flat_doses, flat), Error);
}

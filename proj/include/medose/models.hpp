#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medose/errors.hpp"

namespace medose {

/// Log-logistic family. Parameters are always stored in the order of the full
/// five-parameter model (b, c, d, e, f) restricted to the free ones:
///   LL5: (b, c, d, e, f)   LL4: (b, c, d, e), f = 1   LL3: (b, d, e), c = 0, f = 1
enum class ModelFamily { LL3, LL4, LL5 };

/// b steepness, c lower and d upper asymptote, e inflection dose, f asymmetry.
enum class Param { b = 0, c = 1, d = 2, e = 3, f = 4 };

int parameter_count(ModelFamily family);
std::span<const Param> parameter_names(ModelFamily family);
std::optional<int> parameter_position(ModelFamily family, Param param);

char to_char(Param param);
std::optional<Param> param_from_char(char name);
std::string to_string(ModelFamily family);
ModelFamily family_from_string(const std::string& name);

/// Free parameters of one curve, in `parameter_names(family)` order.
using CurveParams = Eigen::VectorXd;

namespace detail {

/// Expands a family parameter vector to (b, c, d, e, f), inserting the fixed values.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 5, 1> expand(ModelFamily family,
                                                     const Eigen::MatrixBase<Derived>& params) {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, 5, 1> full;
    switch (family) {
        case ModelFamily::LL3:
            full << params(0), Scalar(0), params(1), params(2), Scalar(1);
            break;
        case ModelFamily::LL4:
            full << params(0), params(1), params(2), params(3), Scalar(1);
            break;
        case ModelFamily::LL5:
            full << params(0), params(1), params(2), params(3), params(4);
            break;
    }
    return full;
}

/// (f(0), f(inf)) of a full parameter vector. A flat curve (b == 0) has both
/// limits equal to its constant value.
template <typename Scalar>
std::pair<Scalar, Scalar> limits(const Eigen::Matrix<Scalar, 5, 1>& p) {
    const Scalar b = p(0), c = p(1), d = p(2), f = p(4);
    if (b > Scalar(0)) return {d, c};
    if (b < Scalar(0)) return {c, d};
    const Scalar flat = c + (d - c) / std::pow(Scalar(2), f);
    return {flat, flat};
}

/// Curve value without validation; dose 0 and +inf resolve to the limits.
template <typename Scalar>
Scalar evaluate_full(const Eigen::Matrix<Scalar, 5, 1>& p, Scalar dose) {
    if (dose <= Scalar(0)) return limits(p).first;
    if (std::isinf(dose)) return limits(p).second;
    const Scalar b = p(0), c = p(1), d = p(2), e = p(3), f = p(4);
    const Scalar t = b * (std::log(dose) - std::log(e));
    // (1 + exp(t))^f, kept in log space so large t saturates to the limit
    const Scalar log_denominator = f * (t > Scalar(30) ? t + std::log1p(std::exp(-t))
                                                        : std::log1p(std::exp(t)));
    return c + (d - c) * std::exp(-log_denominator);
}

/// Value and gradient with respect to (b, c, d, e, f) at a positive dose
/// given as log(dose); at dose 0 (`log_dose` = -inf) the limit and its gradient.
inline double evaluate_full_gradient(const Eigen::Matrix<double, 5, 1>& p, double log_dose,
                                     Eigen::Matrix<double, 5, 1>& grad) {
    const double b = p(0), c = p(1), d = p(2), e = p(3), f = p(4);
    grad.setZero();
    if (std::isinf(log_dose) && log_dose < 0.0) {
        if (b > 0.0) {
            grad(2) = 1.0;
            return d;
        }
        grad(1) = 1.0;
        return c;
    }
    const double log_ratio = log_dose - std::log(e);
    const double t = b * log_ratio;
    const double softplus = t > 30.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
    const double logistic = t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
    const double g = std::exp(-f * softplus);
    const double common = (d - c) * f * g * logistic;
    grad(0) = -common * log_ratio;
    grad(1) = 1.0 - g;
    grad(2) = g;
    grad(3) = common * b / e;
    grad(4) = -(d - c) * g * softplus;
    return c + (d - c) * g;
}

}  // namespace detail

/// Throws ErrorKind::invalid_parameter unless params has the family's length,
/// is finite, b != 0, e > 0 and (LL5) f > 0.
void validate_params(ModelFamily family, const Eigen::Ref<const Eigen::VectorXd>& params);

/// Response at `dose` (>= 0); dose 0 and +inf give the analytic limits.
template <typename Derived>
typename Derived::Scalar evaluate(ModelFamily family, const Eigen::MatrixBase<Derived>& params,
                                  typename Derived::Scalar dose) {
    using Scalar = typename Derived::Scalar;
    if constexpr (std::is_same_v<Scalar, double>) {
        validate_params(family, params);
    }
    if (!(dose >= Scalar(0))) {
        throw Error(ErrorKind::domain, "dose must be nonnegative");
    }
    return detail::evaluate_full<Scalar>(detail::expand(family, params), dose);
}

/// (value at dose 0, value at dose infinity).
std::pair<double, double> asymptotes(ModelFamily family,
                                     const Eigen::Ref<const Eigen::VectorXd>& params);

/// Dose at which the curve has covered the fraction alpha of the way from its
/// dose-zero limit to its dose-infinity limit.
double conditional_ed(ModelFamily family, const Eigen::Ref<const Eigen::VectorXd>& params,
                      double alpha);

/// Central-difference gradient of the response with respect to the free parameters.
Eigen::VectorXd gradient_params(ModelFamily family, const Eigen::Ref<const Eigen::VectorXd>& params,
                                double dose);

/// Heuristic starting values from raw dose-response pairs.
CurveParams self_start(ModelFamily family, std::span<const double> doses,
                       std::span<const double> responses);

/// Relative step of every central difference in the library: cbrt(eps) * max(1, |x|).
inline double central_step(double x) {
    static const double base = std::cbrt(std::numeric_limits<double>::epsilon());
    return base * std::max(1.0, std::abs(x));
}

}  // namespace medose

#include "medose/models.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <set>

namespace medose {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_parameter: return "invalid parameter";
        case ErrorKind::domain: return "domain error";
        case ErrorKind::degenerate_data: return "degenerate data";
        case ErrorKind::schema: return "schema error";
        case ErrorKind::parse: return "parse error";
        case ErrorKind::validation: return "validation error";
        case ErrorKind::io: return "i/o error";
        case ErrorKind::rank_deficiency: return "rank deficiency";
        case ErrorKind::resource: return "resource error";
        case ErrorKind::method: return "method error";
        case ErrorKind::lookup: return "lookup error";
        case ErrorKind::no_solution: return "no solution";
        case ErrorKind::evaluation: return "evaluation error";
        case ErrorKind::division_hazard: return "division hazard";
    }
    return "error";
}

namespace {

constexpr std::array<Param, 3> kLL3{Param::b, Param::d, Param::e};
constexpr std::array<Param, 4> kLL4{Param::b, Param::c, Param::d, Param::e};
constexpr std::array<Param, 5> kLL5{Param::b, Param::c, Param::d, Param::e, Param::f};

}  // namespace

int parameter_count(ModelFamily family) {
    return static_cast<int>(parameter_names(family).size());
}

std::span<const Param> parameter_names(ModelFamily family) {
    switch (family) {
        case ModelFamily::LL3: return kLL3;
        case ModelFamily::LL4: return kLL4;
        case ModelFamily::LL5: return kLL5;
    }
    return kLL5;
}

std::optional<int> parameter_position(ModelFamily family, Param param) {
    const auto names = parameter_names(family);
    const auto it = std::find(names.begin(), names.end(), param);
    if (it == names.end()) return std::nullopt;
    return static_cast<int>(it - names.begin());
}

char to_char(Param param) { return "bcdef"[static_cast<int>(param)]; }

std::optional<Param> param_from_char(char name) {
    switch (name) {
        case 'b': return Param::b;
        case 'c': return Param::c;
        case 'd': return Param::d;
        case 'e': return Param::e;
        case 'f': return Param::f;
        default: return std::nullopt;
    }
}

std::string to_string(ModelFamily family) {
    switch (family) {
        case ModelFamily::LL3: return "LL3";
        case ModelFamily::LL4: return "LL4";
        case ModelFamily::LL5: return "LL5";
    }
    return "LL5";
}

ModelFamily family_from_string(const std::string& name) {
    if (name == "LL3" || name == "ll3") return ModelFamily::LL3;
    if (name == "LL4" || name == "ll4") return ModelFamily::LL4;
    if (name == "LL5" || name == "ll5") return ModelFamily::LL5;
    throw Error(ErrorKind::invalid_parameter, "unknown model family '" + name + "'");
}

void validate_params(ModelFamily family, const Eigen::Ref<const Eigen::VectorXd>& params) {
    if (params.size() != parameter_count(family)) {
        throw Error(ErrorKind::invalid_parameter,
                    to_string(family) + " expects " + std::to_string(parameter_count(family)) +
                        " parameters, got " + std::to_string(params.size()));
    }
    if (!params.allFinite()) {
        throw Error(ErrorKind::invalid_parameter, "non-finite curve parameter");
    }
    const auto full = detail::expand(family, params);
    if (full(0) == 0.0) throw Error(ErrorKind::invalid_parameter, "steepness b must be nonzero");
    if (!(full(3) > 0.0)) throw Error(ErrorKind::invalid_parameter, "e must be positive");
    if (!(full(4) > 0.0)) throw Error(ErrorKind::invalid_parameter, "f must be positive");
}

std::pair<double, double> asymptotes(ModelFamily family,
                                     const Eigen::Ref<const Eigen::VectorXd>& params) {
    validate_params(family, params);
    return detail::limits<double>(detail::expand(family, params));
}

double conditional_ed(ModelFamily family, const Eigen::Ref<const Eigen::VectorXd>& params,
                      double alpha) {
    validate_params(family, params);
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw Error(ErrorKind::domain, "alpha must lie in (0, 1)");
    }
    const auto p = detail::expand(family, params);
    const double b = p(0), e = p(3), f = p(4);
    // Fraction of the way from f(0) to f(inf) is 1 - (1+u)^-f for b > 0 and
    // (1+u)^-f for b < 0, with u = (dose/e)^b.
    const double u = b > 0.0 ? std::expm1(-std::log1p(-alpha) / f)
                             : std::expm1(-std::log(alpha) / f);
    return e * std::pow(u, 1.0 / b);
}

Eigen::VectorXd gradient_params(ModelFamily family, const Eigen::Ref<const Eigen::VectorXd>& params,
                                double dose) {
    validate_params(family, params);
    const int q = parameter_count(family);
    const auto names = parameter_names(family);
    Eigen::VectorXd grad(q);
    Eigen::VectorXd work = params;
    for (int k = 0; k < q; ++k) {
        const double x = params(k);
        const double h = central_step(x);
        const bool positive = names[k] == Param::e || names[k] == Param::f;
        if (positive && x - h <= 0.0) {
            work(k) = x + h;
            const double up = detail::evaluate_full<double>(detail::expand(family, work), dose);
            work(k) = x;
            const double mid = detail::evaluate_full<double>(detail::expand(family, work), dose);
            grad(k) = (up - mid) / h;
            continue;
        }
        work(k) = x + h;
        const double up = detail::evaluate_full<double>(detail::expand(family, work), dose);
        work(k) = x - h;
        const double down = detail::evaluate_full<double>(detail::expand(family, work), dose);
        work(k) = x;
        grad(k) = (up - down) / (2.0 * h);
    }
    return grad;
}

CurveParams self_start(ModelFamily family, std::span<const double> doses,
                       std::span<const double> responses) {
    if (doses.size() != responses.size()) {
        throw Error(ErrorKind::invalid_parameter, "doses and responses differ in length");
    }
    std::map<double, std::pair<double, int>> groups;
    for (std::size_t i = 0; i < doses.size(); ++i) {
        auto& g = groups[doses[i]];
        g.first += responses[i];
        g.second += 1;
    }
    if (static_cast<int>(groups.size()) < parameter_count(family)) {
        throw Error(ErrorKind::degenerate_data,
                    "need at least " + std::to_string(parameter_count(family)) +
                        " distinct doses, got " + std::to_string(groups.size()));
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& [dose, g] : groups) {
        const double mean = g.first / g.second;
        lo = std::min(lo, mean);
        hi = std::max(hi, mean);
    }
    const bool free_lower = family != ModelFamily::LL3;
    const double c0 = free_lower ? lo : 0.0;
    const double d0 = hi;
    if (!(hi > lo) || !(d0 > c0)) {
        throw Error(ErrorKind::degenerate_data, "responses carry no dose-related variation");
    }

    // logit of the scaled response is linear in log dose: logit = b log e - b log x
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < doses.size(); ++i) {
        if (!(doses[i] > 0.0)) continue;
        const double p = std::clamp((responses[i] - c0) / (d0 - c0), 0.01, 0.99);
        const double x = std::log(doses[i]);
        const double y = std::log(p / (1.0 - p));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    const double sxx_c = sxx - sx * sx / n;
    if (n < 2 || !(sxx_c > 0.0)) {
        throw Error(ErrorKind::degenerate_data, "need at least two distinct positive doses");
    }
    const double slope = (sxy - sx * sy / n) / sxx_c;
    const double intercept = (sy - slope * sx) / n;
    double b0 = -slope;
    if (std::abs(b0) < 1e-3) b0 = 1.0;
    const double log_e0 = intercept / b0;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    for (const auto& [dose, g] : groups) {
        if (dose > 0.0) {
            xmin = std::min(xmin, std::log(dose));
            xmax = std::max(xmax, std::log(dose));
        }
    }
    // keep the inflection within a few decades of the design
    const double e0 = std::exp(std::clamp(log_e0, xmin - 2.0, xmax + 2.0));

    CurveParams start(parameter_count(family));
    switch (family) {
        case ModelFamily::LL3: start << b0, d0, e0; break;
        case ModelFamily::LL4: start << b0, c0, d0, e0; break;
        case ModelFamily::LL5: start << b0, c0, d0, e0, 1.0; break;
    }
    return start;
}

}  // namespace medose

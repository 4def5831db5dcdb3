#include "medose/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

namespace medose {

Sharing FixedEffectsSpec::of(Param param) const {
    const auto it = sharing.find(param);
    return it == sharing.end() ? Sharing::shared_across_curves : it->second;
}

FixedEffectsSpec FixedEffectsSpec::all_separate(ModelFamily family) {
    FixedEffectsSpec spec;
    for (Param p : parameter_names(family)) spec.sharing[p] = Sharing::separate_per_curve;
    return spec;
}

FixedLayout::FixedLayout(ModelFamily family, const FixedEffectsSpec& spec, std::vector<std::string> curves)
    : family_(family), curves_(std::move(curves)) {
    std::sort(curves_.begin(), curves_.end());
    curves_.erase(std::unique(curves_.begin(), curves_.end()), curves_.end());
    if (curves_.empty()) throw Error(ErrorKind::validation, "fixed-effects layout needs at least one curve");
    const auto names = parameter_names(family);
    const int q = static_cast<int>(names.size());
    index_.assign(curves_.size(), std::vector<int>(q, -1));
    for (int pos = 0; pos < q; ++pos) {
        const Param p = names[pos];
        const std::string base(1, to_char(p));
        if (spec.of(p) == Sharing::shared_across_curves || curves_.size() == 1) {
            const int idx = size();
            coord_param_.push_back(p);
            names_.push_back(base);
            for (auto& row : index_) row[pos] = idx;
        } else {
            for (std::size_t k = 0; k < curves_.size(); ++k) {
                index_[k][pos] = size();
                coord_param_.push_back(p);
                names_.push_back(base + ":" + curves_[k]);
            }
        }
    }
}

int FixedLayout::curve_position(std::string_view curve_id) const {
    const auto it = std::lower_bound(curves_.begin(), curves_.end(), curve_id);
    if (it == curves_.end() || *it != curve_id) {
        throw Error(ErrorKind::lookup, "unknown curve '" + std::string(curve_id) + "'");
    }
    return static_cast<int>(it - curves_.begin());
}

CurveParams FixedLayout::curve_params(const Eigen::VectorXd& beta, int curve) const {
    const auto& row = index_.at(curve);
    CurveParams out(row.size());
    for (std::size_t pos = 0; pos < row.size(); ++pos) out(pos) = beta(row[pos]);
    return out;
}

bool FixedLayout::log_scale(int coordinate) const {
    const Param p = coord_param_[coordinate];
    return p == Param::e || p == Param::f;
}

Eigen::VectorXd FixedLayout::to_internal(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd theta = beta;
    for (int k = 0; k < size(); ++k) {
        if (log_scale(k)) theta(k) = std::log(beta(k));
    }
    return theta;
}

Eigen::VectorXd FixedLayout::to_natural(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd beta = theta;
    for (int k = 0; k < size(); ++k) {
        if (log_scale(k)) beta(k) = std::exp(theta(k));
    }
    return beta;
}

std::string to_string(Estimator estimator) {
    switch (estimator) {
        case Estimator::NLS: return "NLS";
        case Estimator::GNLS: return "GNLS";
        case Estimator::NLME: return "NLME";
    }
    return "NLS";
}

std::vector<int> FitResult::random_positions() const {
    std::vector<int> out;
    if (!random_spec) return out;
    for (Param p : random_spec->random_parameters) {
        const auto pos = parameter_position(family, p);
        if (!pos) throw Error(ErrorKind::invalid_parameter, "random parameter not in model family");
        out.push_back(*pos);
    }
    return out;
}

bool apply_random_effects(ModelFamily family, const Eigen::VectorXd& fixed_params,
                          const std::vector<int>& positions, const Eigen::VectorXd& offsets,
                          Eigen::VectorXd& out, double floor_fraction) {
    out = fixed_params;
    for (std::size_t j = 0; j < positions.size(); ++j) out(positions[j]) += offsets(j);
    bool clamped = false;
    for (Param p : {Param::e, Param::f}) {
        const auto pos = parameter_position(family, p);
        if (!pos) continue;
        const double floor = floor_fraction * fixed_params(*pos);
        if (out(*pos) < floor) {
            out(*pos) = floor;
            clamped = true;
        }
    }
    return clamped;
}

namespace {

using Full = Eigen::Matrix<double, 5, 1>;

constexpr double kRandomFloor = 1e-12;

struct Design {
    std::vector<double> dose;
    std::vector<double> y;
    std::vector<int> curve;
    std::vector<std::vector<std::size_t>> clusters;
    std::vector<std::string> cluster_ids;
};

Design make_design(const Dataset& data, const FixedLayout& layout) {
    Design d;
    d.dose.reserve(data.size());
    for (const auto& obs : data.observations()) {
        d.dose.push_back(obs.dose);
        d.y.push_back(obs.response);
        d.curve.push_back(layout.curve_position(obs.curve_id));
    }
    for (const auto& [id, rows] : data.cluster_index()) {
        d.cluster_ids.push_back(id);
        d.clusters.push_back(rows);
    }
    return d;
}

std::vector<Full> expand_curves(const FixedLayout& layout, const Eigen::VectorXd& beta) {
    std::vector<Full> out(layout.curve_count());
    for (int k = 0; k < layout.curve_count(); ++k) {
        out[k] = detail::expand(layout.family(), layout.curve_params(beta, k));
    }
    return out;
}

Eigen::VectorXd residuals(const Design& d, const FixedLayout& layout, const Eigen::VectorXd& beta) {
    const auto curves = expand_curves(layout, beta);
    Eigen::VectorXd r(d.y.size());
    for (std::size_t i = 0; i < d.y.size(); ++i) {
        r(i) = d.y[i] - detail::evaluate_full<double>(curves[d.curve[i]], d.dose[i]);
    }
    return r;
}

/// R^{-1/2} r per cluster for R = (1 - rho) I + rho J.
Eigen::VectorXd whiten(const Design& d, const Eigen::VectorXd& r, double rho) {
    Eigen::VectorXd out(r.size());
    for (const auto& rows : d.clusters) {
        const double n = static_cast<double>(rows.size());
        double mean = 0.0;
        for (auto i : rows) mean += r(i);
        mean /= n;
        const double within = 1.0 / std::sqrt(1.0 - rho);
        const double between = 1.0 / std::sqrt(1.0 + (n - 1.0) * rho);
        for (auto i : rows) out(i) = (r(i) - mean) * within + mean * between;
    }
    return out;
}

double log_det_cs(const Design& d, double rho) {
    double acc = 0.0;
    for (const auto& rows : d.clusters) {
        const double n = static_cast<double>(rows.size());
        acc += (n - 1.0) * std::log1p(-rho) + std::log1p((n - 1.0) * rho);
    }
    return acc;
}

Eigen::VectorXd start_values(const Dataset& data, const FixedLayout& layout) {
    const int q = parameter_count(layout.family());
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(layout.size());
    Eigen::VectorXd count = Eigen::VectorXd::Zero(layout.size());
    for (int k = 0; k < layout.curve_count(); ++k) {
        const auto& rows = data.curve_index().at(layout.curves()[k]);
        std::vector<double> doses, responses;
        for (auto i : rows) {
            doses.push_back(data[i].dose);
            responses.push_back(data[i].response);
        }
        const CurveParams start = self_start(layout.family(), doses, responses);
        for (int pos = 0; pos < q; ++pos) {
            const int idx = layout.index(k, pos);
            sum(idx) += layout.log_scale(idx) ? std::log(start(pos)) : start(pos);
            count(idx) += 1.0;
        }
    }
    Eigen::VectorXd beta = sum.cwiseQuotient(count);
    for (int k = 0; k < layout.size(); ++k) {
        if (layout.log_scale(k)) beta(k) = std::exp(beta(k));
    }
    return beta;
}

void check_rank(const Eigen::MatrixXd& jac, const char* what) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(jac);
    qr.setThreshold(1e-10);
    if (qr.rank() < jac.cols()) {
        throw Error(ErrorKind::rank_deficiency,
                    std::string(what) + ": Jacobian at the optimum is rank deficient (rank " +
                        std::to_string(qr.rank()) + " of " + std::to_string(jac.cols()) + ")");
    }
}

Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& m, const char* what) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any()) {
        throw Error(ErrorKind::rank_deficiency, std::string(what) + ": information matrix is not positive definite");
    }
    Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
    return 0.5 * (inv + inv.transpose());
}

void fill_common(FitResult& fit, const Dataset& data, const FixedLayout& layout) {
    fit.curves = layout.curves();
    fit.fixed_names = layout.names();
    fit.n_obs = data.size();
    fit.clusters.clear();
    for (const auto& [id, rows] : data.cluster_index()) {
        ClusterInfo info;
        info.id = id;
        std::set<std::string> curves;
        for (auto i : rows) curves.insert(data[i].curve_id);
        info.curves.assign(curves.begin(), curves.end());
        fit.clusters.push_back(std::move(info));
    }
    fit.dose_min_positive = std::numeric_limits<double>::infinity();
    fit.dose_max = 0.0;
    fit.has_zero_dose = false;
    for (const auto& obs : data.observations()) {
        if (obs.dose > 0.0) fit.dose_min_positive = std::min(fit.dose_min_positive, obs.dose);
        else fit.has_zero_dose = true;
        fit.dose_max = std::max(fit.dose_max, obs.dose);
    }
    if (!std::isfinite(fit.dose_min_positive)) fit.dose_min_positive = 0.0;
}

double gaussian_loglik(double rss, double sigma, std::size_t n) {
    return -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * sigma * sigma) -
           rss / (2.0 * sigma * sigma);
}

/// Laplace approximation to the per-cluster marginal likelihood, with the
/// random effects written as b = Omega u, u ~ N(0, I).
class LaplaceModel {
public:
    LaplaceModel(const Dataset& data, const FixedLayout& layout, const RandomEffectsSpec& random,
                 const FitOptions& options)
        : layout_(layout), options_(options) {
        for (Param p : random.random_parameters) positions_.push_back(static_cast<int>(p));
        const Design design = make_design(data, layout);
        for (const auto& rows : design.clusters) {
            Cluster c;
            const auto n = static_cast<Eigen::Index>(rows.size());
            c.y.resize(n);
            c.log_dose.resize(n);
            for (Eigen::Index k = 0; k < n; ++k) {
                const auto i = rows[k];
                c.y(k) = design.y[i];
                c.log_dose(k) = design.dose[i] > 0.0 ? std::log(design.dose[i])
                                                     : -std::numeric_limits<double>::infinity();
                c.curve.push_back(design.curve[i]);
            }
            clusters_.push_back(std::move(c));
        }
        warm_.resize(clusters_.size());
    }

    std::size_t cluster_count() const { return clusters_.size(); }

    double loglik(const Eigen::VectorXd& beta, const Eigen::MatrixXd& omega, double sigma,
                  std::vector<Eigen::VectorXd>* modes) const {
        const auto base = expand_curves(layout_, beta);
        if (modes) modes->assign(clusters_.size(), Eigen::VectorXd());
        double total = 0.0;
        for (std::size_t c = 0; c < clusters_.size(); ++c) {
            total += cluster_loglik(c, base, omega, sigma, modes ? &(*modes)[c] : nullptr);
        }
        return total;
    }

private:
    struct Cluster {
        Eigen::VectorXd y;
        Eigen::VectorXd log_dose;  // -inf at dose 0
        std::vector<int> curve;
    };

    /// Curve parameters shifted by b; flags which of e, f hit the floor.
    Full shifted(const Full& fixed, const Eigen::VectorXd& b, bool& e_floored, bool& f_floored) const {
        Full p = fixed;
        for (std::size_t j = 0; j < positions_.size(); ++j) p(positions_[j]) += b(static_cast<Eigen::Index>(j));
        e_floored = p(3) < kRandomFloor * fixed(3);
        f_floored = p(4) < kRandomFloor * fixed(4);
        if (e_floored) p(3) = kRandomFloor * fixed(3);
        if (f_floored) p(4) = kRandomFloor * fixed(4);
        return p;
    }

    void mean(const Cluster& c, const std::vector<Full>& base, const Eigen::VectorXd& b, Eigen::VectorXd& mu) const {
        bool ef, ff;
        int last_curve = -1;
        Full p = Full::Zero();
        for (Eigen::Index k = 0; k < c.y.size(); ++k) {
            if (c.curve[k] != last_curve) {
                last_curve = c.curve[k];
                p = shifted(base[last_curve], b, ef, ff);
            }
            mu(k) = c.log_dose(k) == -std::numeric_limits<double>::infinity()
                        ? detail::limits<double>(p).first
                        : detail::evaluate_full<double>(p, std::exp(c.log_dose(k)));
        }
    }

    /// Mean and its Jacobian with respect to b.
    void mean_jacobian(const Cluster& c, const std::vector<Full>& base, const Eigen::VectorXd& b,
                       Eigen::VectorXd& mu, Eigen::MatrixXd& z) const {
        bool ef = false, ff = false;
        int last_curve = -1;
        Full p = Full::Zero(), grad;
        for (Eigen::Index k = 0; k < c.y.size(); ++k) {
            if (c.curve[k] != last_curve) {
                last_curve = c.curve[k];
                p = shifted(base[last_curve], b, ef, ff);
            }
            mu(k) = detail::evaluate_full_gradient(p, c.log_dose(k), grad);
            if (ef) grad(3) = 0.0;
            if (ff) grad(4) = 0.0;
            for (std::size_t j = 0; j < positions_.size(); ++j) {
                z(k, static_cast<Eigen::Index>(j)) = grad(positions_[j]);
            }
        }
    }

    double objective_at(const Cluster& c, const std::vector<Full>& base, const Eigen::MatrixXd& omega, double s2,
                        const Eigen::VectorXd& u, Eigen::VectorXd& mu) const {
        mean(c, base, omega * u, mu);
        return (c.y - mu).squaredNorm() / (2.0 * s2) + 0.5 * u.squaredNorm();
    }

    double cluster_loglik(std::size_t index, const std::vector<Full>& base, const Eigen::MatrixXd& omega,
                          double sigma, Eigen::VectorXd* mode) const {
        const Cluster& c = clusters_[index];
        const Eigen::Index n = c.y.size();
        const Eigen::Index q = static_cast<Eigen::Index>(positions_.size());
        const double s2 = sigma * sigma;

        Eigen::VectorXd b(q), mu(n), trial_mu(n), r(n), grad(q), delta(q), trial(q), bj(q), steps(q);
        Eigen::MatrixXd z(n, q), ju(n, q), a(q, q), curvature(q, q), zp(n, q), zm(n, q);
        Eigen::LLT<Eigen::MatrixXd> llt(q), newton(q);
        for (Eigen::Index j = 0; j < q; ++j) {
            double scale = 0.0;
            for (int k : c.curve) scale = std::max(scale, std::abs(base[k](positions_[j])));
            steps(j) = central_step(scale);
        }

        // warm start from the previous mode of this cluster when it is better than zero
        Eigen::VectorXd u = Eigen::VectorXd::Zero(q);
        Eigen::VectorXd& cached = warm_[index];
        if (cached.size() == q && cached.allFinite()) {
            if (objective_at(c, base, omega, s2, cached, mu) < objective_at(c, base, omega, s2, u, trial_mu)) u = cached;
        }

        double objective = 0.0;
        double log_det = 0.0;
        for (int it = 0;; ++it) {
            b.noalias() = omega * u;
            mean_jacobian(c, base, b, mu, z);
            r = c.y - mu;
            objective = r.squaredNorm() / (2.0 * s2) + 0.5 * u.squaredNorm();
            ju.noalias() = z * omega;
            a.noalias() = ju.transpose() * ju / s2;
            a.diagonal().array() += 1.0;
            llt.compute(a);
            log_det = 0.0;
            for (Eigen::Index j = 0; j < q; ++j) log_det += 2.0 * std::log(llt.matrixLLT()(j, j));
            grad = u;
            grad.noalias() -= ju.transpose() * r / s2;
            if (it >= options_.inner_max_iterations) break;

            // Newton step: add the residual curvature sum_k r_k d2f_k/db2 by differencing the Jacobian
            for (Eigen::Index j = 0; j < q; ++j) {
                bj = b;
                bj(j) = b(j) + steps(j);
                mean_jacobian(c, base, bj, trial_mu, zp);
                bj(j) = b(j) - steps(j);
                mean_jacobian(c, base, bj, trial_mu, zm);
                curvature.col(j) = (zp - zm).transpose() * r / (2.0 * steps(j));
            }
            curvature = 0.5 * (curvature + curvature.transpose());
            newton.compute(a - omega.transpose() * curvature * omega / s2);
            if (newton.info() == Eigen::Success) {
                delta = -newton.solve(grad);
                if (!delta.allFinite() || delta.dot(grad) >= 0.0) delta = -llt.solve(grad);
            } else {
                delta = -llt.solve(grad);
            }
            if (!delta.allFinite() ||
                delta.lpNorm<Eigen::Infinity>() <= options_.inner_tolerance * (1.0 + u.lpNorm<Eigen::Infinity>())) {
                break;
            }
            // once the predicted decrease is below rounding, take the step unchecked
            const double predicted = -0.5 * grad.dot(delta);
            if (predicted <= 1e-13 * (1.0 + objective)) {
                u += delta;
                continue;
            }
            bool accepted = false;
            double t = 1.0;
            for (int k = 0; k < 30; ++k, t *= 0.5) {
                trial = u + t * delta;
                if (objective_at(c, base, omega, s2, trial, trial_mu) <= objective) {
                    u = trial;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) break;
        }
        cached = u;
        if (mode) *mode = omega * u;
        return -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * s2) - objective -
               0.5 * log_det;
    }

    const FixedLayout& layout_;
    std::vector<Cluster> clusters_;
    std::vector<int> positions_;  // into the full (b, c, d, e, f) vector
    FitOptions options_;
    // last mode per cluster; makes one model instance unsafe to share across threads
    mutable std::vector<Eigen::VectorXd> warm_;
};

int variance_parameter_count(const RandomEffectsSpec& random) {
    const int q = static_cast<int>(random.random_parameters.size());
    return random.covariance_structure == CovarianceStructure::unstructured ? q * (q + 1) / 2 : q;
}

/// Lower-triangular factor from log-Cholesky parameters (row-major lower
/// triangle, log on the diagonal), scaled row-wise by `scale`.
Eigen::MatrixXd omega_from(const RandomEffectsSpec& random, const Eigen::VectorXd& params,
                           const Eigen::VectorXd& scale) {
    const int q = static_cast<int>(random.random_parameters.size());
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(q, q);
    int k = 0;
    if (random.covariance_structure == CovarianceStructure::unstructured) {
        for (int i = 0; i < q; ++i) {
            for (int j = 0; j <= i; ++j) l(i, j) = (i == j) ? std::exp(params(k++)) : params(k++);
        }
    } else {
        for (int i = 0; i < q; ++i) l(i, i) = std::exp(params(k++));
    }
    return scale.asDiagonal() * l;
}

void validate_random(ModelFamily family, const RandomEffectsSpec& random) {
    if (random.random_parameters.empty()) {
        throw Error(ErrorKind::invalid_parameter, "mixed-effects fit needs at least one random parameter");
    }
    std::set<Param> seen;
    for (Param p : random.random_parameters) {
        if (!parameter_position(family, p)) {
            throw Error(ErrorKind::invalid_parameter, std::string("random parameter '") + to_char(p) +
                                                          "' is not a parameter of " + to_string(family));
        }
        if (!seen.insert(p).second) {
            throw Error(ErrorKind::invalid_parameter, std::string("random parameter '") + to_char(p) + "' repeated");
        }
    }
}

double median_abs_deviation(std::vector<double> v) {
    const auto med = [](std::vector<double> x) {
        std::sort(x.begin(), x.end());
        const std::size_t n = x.size();
        return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
    };
    const double center = med(v);
    for (double& x : v) x = std::abs(x - center);
    return med(v);
}

/// Initial random-effect standard deviations: robust spread of per-cluster
/// NLS estimates when every cluster can be fitted alone, else 10% of the
/// parameter's magnitude.
Eigen::VectorXd initial_random_sd(const Dataset& data, ModelFamily family, const FixedEffectsSpec& fixed,
                                  const RandomEffectsSpec& random, const FitResult& pooled,
                                  const FitOptions& options) {
    const int q = static_cast<int>(random.random_parameters.size());
    Eigen::VectorXd scale(q);
    std::vector<int> pos(q);
    for (int j = 0; j < q; ++j) {
        pos[j] = *parameter_position(family, random.random_parameters[j]);
        double s = 0.0;
        for (const auto& curve : pooled.curves) s = std::max(s, std::abs(curve_params(pooled, curve)(pos[j])));
        scale(j) = s > 0.0 ? s : 1.0;
    }
    std::vector<std::vector<double>> deviations(q);
    bool ok = true;
    for (const auto& [id, rows] : data.cluster_index()) {
        try {
            const Dataset sub = data.subset(rows);
            const FitResult own = fit_nls(sub, family, fixed, options);
            if (!own.converged) {
                ok = false;
                break;
            }
            for (int j = 0; j < q; ++j) {
                double acc = 0.0;
                for (const auto& curve : own.curves) {
                    acc += curve_params(own, curve)(pos[j]) - curve_params(pooled, curve)(pos[j]);
                }
                deviations[j].push_back(acc / static_cast<double>(own.curves.size()));
            }
        } catch (const Error&) {
            ok = false;
            break;
        }
    }
    Eigen::VectorXd sd(q);
    for (int j = 0; j < q; ++j) {
        double spread = ok ? 1.4826 * median_abs_deviation(deviations[j]) : 0.0;
        if (ok && !(spread > 0.0)) {
            double m = 0.0, s2 = 0.0;
            for (double v : deviations[j]) m += v;
            m /= deviations[j].size();
            for (double v : deviations[j]) s2 += (v - m) * (v - m);
            spread = std::sqrt(s2 / std::max<std::size_t>(1, deviations[j].size() - 1));
        }
        sd(j) = (ok && std::isfinite(spread)) ? std::clamp(spread, 0.01 * scale(j), scale(j)) : 0.1 * scale(j);
    }
    return sd;
}

}  // namespace

double nls_loglik(const Dataset& data, const FixedLayout& layout, const Eigen::VectorXd& beta, double sigma) {
    const Design d = make_design(data, layout);
    return gaussian_loglik(residuals(d, layout, beta).squaredNorm(), sigma, data.size());
}

double gnls_loglik(const Dataset& data, const FixedLayout& layout, const Eigen::VectorXd& beta, double sigma,
                   double rho) {
    const Design d = make_design(data, layout);
    const Eigen::VectorXd w = whiten(d, residuals(d, layout, beta), rho);
    return gaussian_loglik(w.squaredNorm(), sigma, data.size()) - 0.5 * log_det_cs(d, rho);
}

double nlme_loglik(const Dataset& data, const FixedLayout& layout, const RandomEffectsSpec& random,
                   const Eigen::VectorXd& beta, const Eigen::MatrixXd& omega, double sigma,
                   std::vector<Eigen::VectorXd>* modes, const FitOptions& options) {
    validate_random(layout.family(), random);
    const LaplaceModel model(data, layout, random, options);
    return model.loglik(beta, omega, sigma, modes);
}

FitResult fit_nls(const Dataset& data, ModelFamily family, const FixedEffectsSpec& fixed,
                  const FitOptions& options) {
    const FixedLayout layout(family, fixed, data.curve_ids());
    const Design design = make_design(data, layout);
    const int p = layout.size();
    const auto n = data.size();
    if (n <= static_cast<std::size_t>(p)) {
        throw Error(ErrorKind::degenerate_data, "need more observations than fixed effects");
    }
    const Eigen::VectorXd beta0 = start_values(data, layout);
    const ResidualFunction res = [&](const Eigen::VectorXd& theta) {
        return residuals(design, layout, layout.to_natural(theta));
    };
    const LeastSquaresResult lm = levenberg_marquardt(res, layout.to_internal(beta0), options.least_squares);
    if (!lm.x.allFinite()) throw Error(ErrorKind::evaluation, "NLS: non-finite parameter estimate");

    FitResult fit;
    fit.estimator = Estimator::NLS;
    fit.family = family;
    fit.fixed_spec = fixed;
    fit.beta_hat = layout.to_natural(lm.x);
    fill_common(fit, data, layout);

    const ResidualFunction natural = [&](const Eigen::VectorXd& beta) { return residuals(design, layout, beta); };
    const Eigen::MatrixXd jac = numeric_jacobian(natural, fit.beta_hat);
    check_rank(jac, "NLS");
    const double rss = lm.rss;
    const double s2 = rss / static_cast<double>(n - p);
    fit.sigma_hat = std::sqrt(s2);
    fit.vcov_beta = s2 * inverse_spd(jac.transpose() * jac, "NLS");
    const double sigma_ml = std::sqrt(std::max(rss, std::numeric_limits<double>::min()) / static_cast<double>(n));
    fit.loglik = gaussian_loglik(rss, sigma_ml, n);
    fit.converged = lm.converged;
    fit.iterations = lm.iterations;
    return fit;
}

FitResult fit_gnls(const Dataset& data, ModelFamily family, const FixedEffectsSpec& fixed,
                   const FitOptions& options) {
    const FitResult start = fit_nls(data, family, fixed, options);
    const FixedLayout layout(family, fixed, data.curve_ids());
    const Design design = make_design(data, layout);
    std::size_t max_n = 0;
    for (const auto& rows : design.clusters) max_n = std::max(max_n, rows.size());
    if (max_n < 2) {
        throw Error(ErrorKind::degenerate_data, "GNLS needs a cluster with at least two observations");
    }
    const double n = static_cast<double>(data.size());
    const double lower = -1.0 / (static_cast<double>(max_n) - 1.0);
    const auto rho_of = [lower](double z) { return lower + (1.0 - lower) * 0.5 * (1.0 + std::tanh(z)); };
    const Eigen::VectorXd theta0 = layout.to_internal(start.beta_hat);

    const auto fit_at = [&](double rho) {
        const ResidualFunction res = [&](const Eigen::VectorXd& theta) {
            return whiten(design, residuals(design, layout, layout.to_natural(theta)), rho);
        };
        return levenberg_marquardt(res, theta0, options.least_squares);
    };
    const auto profile = [&](double z) {
        const double rho = rho_of(z);
        const LeastSquaresResult lm = fit_at(rho);
        const double s2 = lm.rss / n;
        const double value = 0.5 * n * (std::log(2.0 * std::numbers::pi * s2) + 1.0) + 0.5 * log_det_cs(design, rho);
        return std::isfinite(value) ? value : std::numeric_limits<double>::max();
    };
    constexpr double kZmax = 7.0;
    const ScalarMinimum best = minimize_scalar(profile, -kZmax, kZmax);
    const double z = best.x;
    const double rho = rho_of(z);
    const LeastSquaresResult lm = fit_at(rho);

    FitResult fit;
    fit.estimator = Estimator::GNLS;
    fit.family = family;
    fit.fixed_spec = fixed;
    fit.beta_hat = layout.to_natural(lm.x);
    fill_common(fit, data, layout);
    const double s2 = lm.rss / n;
    fit.sigma_hat = std::sqrt(s2);
    fit.rho_hat = rho;
    fit.rho_at_boundary = std::abs(z) > kZmax - 0.1;
    fit.loglik = gnls_loglik(data, layout, fit.beta_hat, fit.sigma_hat, rho);
    const ResidualFunction natural = [&](const Eigen::VectorXd& beta) {
        return whiten(design, residuals(design, layout, beta), rho);
    };
    const Eigen::MatrixXd jac = numeric_jacobian(natural, fit.beta_hat);
    check_rank(jac, "GNLS");
    fit.vcov_beta = s2 * inverse_spd(jac.transpose() * jac, "GNLS");
    fit.converged = lm.converged && start.converged;
    fit.iterations = best.iterations;
    return fit;
}

FitResult fit_nlme(const Dataset& data, ModelFamily family, const FixedEffectsSpec& fixed,
                   const RandomEffectsSpec& random, const FitOptions& options) {
    validate_random(family, random);
    if (data.cluster_index().size() < 2) {
        throw Error(ErrorKind::degenerate_data, "mixed-effects fit needs at least two clusters");
    }
    const FitResult pooled = fit_nls(data, family, fixed, options);
    const FixedLayout layout(family, fixed, data.curve_ids());
    const LaplaceModel model(data, layout, random, options);

    const int p = layout.size();
    const int nv = variance_parameter_count(random);
    const Eigen::VectorXd sd0 = initial_random_sd(data, family, fixed, random, pooled, options);
    const double n = static_cast<double>(data.size());

    Eigen::VectorXd theta0(p + nv + 1);
    theta0.head(p) = layout.to_internal(pooled.beta_hat);
    theta0.segment(p, nv).setZero();
    theta0(p + nv) = std::log(pooled.sigma_hat * std::sqrt((n - p) / n));
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(p + nv + 1);
    for (int k = 0; k < p; ++k) {
        if (!layout.log_scale(k)) {
            scale(k) = std::max({std::abs(pooled.beta_hat(k)), std::sqrt(pooled.vcov_beta(k, k)), 1e-8});
        }
    }

    const auto unpack = [&](const Eigen::VectorXd& x, Eigen::VectorXd& beta, Eigen::MatrixXd& omega, double& sigma) {
        const Eigen::VectorXd theta = x.cwiseProduct(scale);
        beta = layout.to_natural(theta.head(p));
        omega = omega_from(random, theta.segment(p, nv), sd0);
        sigma = std::exp(theta(p + nv));
    };
    const ScalarFunction objective = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd beta;
        Eigen::MatrixXd omega;
        double sigma = 0.0;
        unpack(x, beta, omega, sigma);
        const double value = -model.loglik(beta, omega, sigma, nullptr);
        return std::isfinite(value) ? value : std::numeric_limits<double>::infinity();
    };

    const Eigen::VectorXd x0 = theta0.cwiseQuotient(scale);
    const Eigen::MatrixXd h0 = numeric_hessian(objective, x0);
    const std::optional<Eigen::MatrixXd> seed =
        h0.allFinite() ? std::optional<Eigen::MatrixXd>(0.5 * (h0 + h0.transpose())) : std::nullopt;
    const MinimizeResult opt = minimize_bfgs(objective, x0, options.outer, seed);

    FitResult fit;
    fit.estimator = Estimator::NLME;
    fit.family = family;
    fit.fixed_spec = fixed;
    fit.random_spec = random;
    fill_common(fit, data, layout);
    unpack(opt.x, fit.beta_hat, fit.omega_hat, fit.sigma_hat);
    if (!fit.beta_hat.allFinite() || !fit.omega_hat.allFinite() || !std::isfinite(fit.sigma_hat)) {
        throw Error(ErrorKind::evaluation, "NLME: non-finite parameter estimate");
    }
    std::vector<Eigen::VectorXd> modes;
    fit.loglik = model.loglik(fit.beta_hat, fit.omega_hat, fit.sigma_hat, &modes);
    for (std::size_t c = 0; c < fit.clusters.size(); ++c) fit.clusters[c].eblup = modes[c];

    const ScalarFunction negative_loglik = [&](const Eigen::VectorXd& beta) {
        return -model.loglik(beta, fit.omega_hat, fit.sigma_hat, nullptr);
    };
    fit.vcov_beta = inverse_spd(numeric_hessian(negative_loglik, fit.beta_hat), "NLME");
    fit.converged = opt.converged;
    fit.iterations = opt.iterations;
    return fit;
}

CurveParams curve_params(const FitResult& fit, std::string_view curve_id) {
    return curve_params(fit, curve_id, fit.beta_hat);
}

CurveParams curve_params(const FitResult& fit, std::string_view curve_id, const Eigen::VectorXd& beta) {
    const FixedLayout layout = fit.layout();
    return layout.curve_params(beta, layout.curve_position(curve_id));
}

}  // namespace medose

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "medose/inference.hpp"
#include "medose/simulation.hpp"
#include "test_support.hpp"

using namespace medose;

namespace {

double median(std::vector<double> v) {
    REQUIRE(!v.empty());
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

StudyOptions small_study(int m, int replicates, std::vector<StudyEstimator> estimators) {
    StudyOptions o;
    o.m_list = {m};
    o.replicates = replicates;
    o.estimators = std::move(estimators);
    o.truth_samples = 20000;
    o.seed = 5;
    return o;
}

const StudyCell& cell(const StudySummary& s, StudyEstimator est, EdMethod method, double alpha) {
    for (const auto& c : s.cells) {
        if (c.estimator == est && c.method == method && std::abs(c.alpha - alpha) < 1e-12) return c;
    }
    FAIL("missing cell");
    throw;
}

}  // namespace

TEST_CASE("marginalized ED90 standard errors are smaller than the GNLS ones replicate by replicate") {
    const StudySummary s = run_study(Scenario::reference(),
                                     small_study(6, 60, {StudyEstimator::gnls, StudyEstimator::nlme_unstructured}));
    std::map<int, double> gnls_se, nlme_se;
    for (const auto& r : s.records) {
        if (!r.ok || std::abs(r.alpha - 0.9) > 1e-12) continue;
        if (r.estimator == StudyEstimator::gnls) gnls_se[r.replicate] = r.std_error;
        if (r.estimator == StudyEstimator::nlme_unstructured && r.method == EdMethod::marginalized) {
            nlme_se[r.replicate] = r.std_error;
        }
    }
    std::vector<double> ratios;
    for (const auto& [rep, se] : nlme_se) {
        if (gnls_se.count(rep) && gnls_se[rep] > 0.0) ratios.push_back(se / gnls_se[rep]);
    }
    REQUIRE(ratios.size() >= 40);
    MESSAGE("median SE ratio marginalized/GNLS at ED90: " << median(ratios));
    CHECK(median(ratios) < 1.0);
}

TEST_CASE("inflating the random effect on e pushes the conditional ED50 further from the truth") {
    const auto options = small_study(10, 60, {StudyEstimator::nlme_unstructured});
    Scenario wide = Scenario::reference();
    wide.sigma_e_scale = 10.0;
    const StudySummary base = run_study(Scenario::reference(), options);
    const StudySummary inflated = run_study(wide, options);
    const double d_base = cell(base, StudyEstimator::nlme_unstructured, EdMethod::conditional, 0.5).median_deviation;
    const double d_wide = cell(inflated, StudyEstimator::nlme_unstructured, EdMethod::conditional, 0.5).median_deviation;
    MESSAGE("conditional ED50 median deviation: " << d_base << " vs " << d_wide);
    CHECK(std::abs(d_wide) > std::abs(d_base));
}

TEST_CASE("the marginalized curve stays inside the envelope of the cluster-specific curves") {
    const Dataset data = generate_dataset(Scenario::reference(), 10, 99).dataset;
    const FitResult fit = fit_nlme(data, ModelFamily::LL3, {},
                                   {{Param::b, Param::d, Param::e}, CovarianceStructure::unstructured});
    const auto rows = predict_curves(fit, "1", default_dose_grid(fit, 40),
                                     {CurveKind::marginalized, CurveKind::cluster_specific});
    std::map<double, std::pair<double, double>> envelope;
    std::map<double, double> marginalized;
    for (const auto& r : rows) {
        if (r.series_label == "marginalized") {
            marginalized[r.dose] = r.value;
            continue;
        }
        auto [it, fresh] = envelope.try_emplace(r.dose, r.value, r.value);
        if (!fresh) {
            it->second.first = std::min(it->second.first, r.value);
            it->second.second = std::max(it->second.second, r.value);
        }
    }
    REQUIRE(marginalized.size() == 40);
    for (const auto& [dose, value] : marginalized) {
        CHECK(value >= envelope[dose].first - 1e-9);
        CHECK(value <= envelope[dose].second + 1e-9);
    }
}

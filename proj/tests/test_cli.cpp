#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "medose/cli.hpp"
#include "medose/csv.hpp"
#include "medose/fit_io.hpp"
#include "medose/simulation.hpp"
#include "test_support.hpp"

using namespace medose;
using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

CsvTable csv_of(const std::string& text) {
    std::istringstream in(text);
    return read_csv(in);
}

struct Workspace {
    medose::testing::TempDir dir;
    std::string assay = dir.file("assay.csv");
    std::string two_curves = dir.file("two.csv");

    Workspace() {
        std::ofstream a(assay);
        write_csv(generate_dataset(Scenario::reference(), 6, 11).dataset, a);
        const auto data = medose::testing::curve_data(
            ModelFamily::LL4,
            {{"ref", medose::testing::params({1.5, 5.0, 100.0, 0.4})}, {"test", medose::testing::params({1.5, 5.0, 100.0, 2.8})}},
            medose::testing::log_doses(0.01, 50.0, 10), 4, 3.0);
        std::ofstream b(two_curves);
        write_csv(data, b);
    }
};

Workspace& workspace() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("fit writes a loadable document and a summary") {
    auto& w = workspace();
    const std::string out = w.dir.file("nlme.json");
    const Run r = run({"fit", "--model", "LL3", "--estimator", "nlme", "--random", "b,d,e", "--re-cov", "un", "--data",
                       w.assay, "--out", out});
    CHECK(r.code == 0);
    CHECK(r.out.find("log-likelihood") != std::string::npos);
    const json doc = json::parse(slurp(out));
    CHECK(doc["omega_hat"].size() == 3);
    CHECK(doc["omega_hat"][0].size() == 3);
    CHECK(doc["metadata"]["version"] == cli::kVersion);
    CHECK(load_fit(out).estimator == Estimator::NLME);
}

TEST_CASE("gnls fit carries rho_hat") {
    const Run r = run({"fit", "--model", "LL4", "--estimator", "gnls", "--data", workspace().assay});
    CHECK(r.code == 0);
    const json doc = json::parse(r.out);
    CHECK(doc.contains("rho_hat"));
    CHECK(doc["rho_hat"].is_number());
}

TEST_CASE("exit codes for bad input") {
    const Run missing = run({"fit", "--model", "LL4", "--data", "/no/such/assay.csv"});
    CHECK(missing.code == cli::exit_data);
    CHECK(missing.err.find("/no/such/assay.csv") != std::string::npos);
    CHECK(run({"fit", "--model", "LL9", "--data", workspace().assay}).code == cli::exit_config);
    CHECK(run({"fit", "--estimator", "gnls", "--random", "d", "--data", workspace().assay}).code == cli::exit_config);
    CHECK(run({"bogus"}).code == cli::exit_config);
    CHECK(run({}).code == cli::exit_config);
}

TEST_CASE("ed tables") {
    auto& w = workspace();
    const std::string fit = w.dir.file("for_ed.json");
    REQUIRE(run({"fit", "--model", "LL3", "--random", "b,d,e", "--data", w.assay, "--out", fit}).code == 0);
    const Run marg = run({"ed", "--fit", fit, "--alphas", "10,25,50,75,90", "--method", "marginalized"});
    CHECK(marg.code == 0);
    const CsvTable t = csv_of(marg.out);
    CHECK(t.rows.size() == 5);
    CHECK(marg.err.find("\"quad_points\":9") != std::string::npos);

    const Run json_out = run({"ed", "--fit", fit, "--method", "conditional", "--format", "json", "--quad-points", "7"});
    CHECK(json_out.code == 0);
    const json doc = json::parse(json_out.out);
    CHECK(doc["rows"].size() == 5);
    CHECK(doc["metadata"]["quad_points"] == 7);
    CHECK(doc["metadata"].contains("timestamp"));

    // inline NLS fit, closed-form conditional EDs
    const Run nls = run({"ed", "--model", "LL3", "--data", w.assay, "--method", "conditional", "--alphas", "50"});
    CHECK(nls.code == 0);
    const FitResult direct = fit_nls(load_csv(std::filesystem::path(w.assay)), ModelFamily::LL3);
    CHECK(std::stod(csv_of(nls.out).rows[0][3]) == doctest::Approx(direct.beta_hat(2)).epsilon(1e-12));

    const Run gnls = run({"ed", "--model", "LL3", "--estimator", "gnls", "--data", w.assay, "--method", "marginalized"});
    CHECK(gnls.code == cli::exit_config);
}

TEST_CASE("relative potency") {
    auto& w = workspace();
    const Run single = run({"rp", "--model", "LL3", "--data", w.assay});
    CHECK(single.code == cli::exit_config);
    CHECK(single.err.find("needs two curves") != std::string::npos);

    const std::string fit = w.dir.file("two.json");
    REQUIRE(run({"fit", "--model", "LL4", "--shared", "b,c,d", "--data", w.two_curves, "--out", fit}).code == 0);
    const Run r95 = run({"rp", "--fit", fit, "--method", "conditional"});
    const Run r99 = run({"rp", "--fit", fit, "--method", "conditional", "--level", "0.99"});
    CHECK(r95.code == 0);
    const CsvTable t95 = csv_of(r95.out), t99 = csv_of(r99.out);
    REQUIRE(t95.rows.size() == 5);
    CHECK(t95.rows[0][0] == "test");
    CHECK(t95.rows[0][1] == "ref");
    CHECK(std::stod(t95.rows[2][3]) == doctest::Approx(7.0).epsilon(0.05));
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(std::stod(t99.rows[k][5]) < std::stod(t95.rows[k][5]));
        CHECK(std::stod(t99.rows[k][6]) > std::stod(t95.rows[k][6]));
    }
}

TEST_CASE("predict series") {
    auto& w = workspace();
    const std::string fit = w.dir.file("for_predict.json");
    REQUIRE(run({"fit", "--model", "LL3", "--random", "b,d,e", "--data", w.assay, "--out", fit}).code == 0);
    const Run all = run({"predict", "--fit", fit, "--which", "conditional,marginalized,cluster"});
    CHECK(all.code == 0);
    const CsvTable t = csv_of(all.out);
    std::set<std::string> labels;
    for (const auto& row : t.rows) labels.insert(row[1]);
    CHECK(labels.size() == 8);
    CHECK(t.rows.size() == 800);

    const Run one = run({"predict", "--fit", fit, "--doses", "0.4"});
    CHECK(csv_of(one.out).rows.size() == 8);

    const Run nls = run({"predict", "--model", "LL3", "--data", w.assay, "--which", "cluster"});
    CHECK(nls.code == cli::exit_config);
}

TEST_CASE("simulate is reproducible and honours scenario switches") {
    auto& w = workspace();
    const std::vector<std::string> base{"simulate", "--m", "4", "--replicates", "2", "--seed", "7", "--mc-samples",
                                        "2000", "--estimators", "gnls,nlme_diag"};
    auto with = [&](std::vector<std::string> extra, const std::string& out) {
        std::vector<std::string> args = base;
        args.insert(args.end(), extra.begin(), extra.end());
        args.push_back("--out");
        args.push_back(out);
        return run(args);
    };
    REQUIRE(with({}, w.dir.file("a.csv")).code == 0);
    REQUIRE(with({"--threads", "2"}, w.dir.file("b.csv")).code == 0);
    CHECK(slurp(w.dir.file("a.csv")) == slurp(w.dir.file("b.csv")));
    const json meta = json::parse(slurp(w.dir.file("a.csv") + ".meta.json"));
    CHECK(meta["seed"] == 7);

    REQUIRE(with({"--correlation", "diagonal"}, w.dir.file("c.csv")).code == 0);
    CHECK(slurp(w.dir.file("a.csv")) != slurp(w.dir.file("c.csv")));
    REQUIRE(with({"--sigma-e-scale", "10"}, w.dir.file("d.csv")).code == 0);
    CHECK(slurp(w.dir.file("a.csv")) != slurp(w.dir.file("d.csv")));
    CHECK(csv_of(slurp(w.dir.file("a.csv"))).rows.size() == 9);
}

TEST_CASE("the installed binary maps exit codes") {
    const std::string cmd = std::string(MEDOSE_CLI_PATH) + " fit --data /no/such/file.csv 2>/dev/null";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == cli::exit_data);
}

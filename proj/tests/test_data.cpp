#include "doctest.h"

#include <fstream>
#include <sstream>

#include "medose/csv.hpp"
#include "medose/data.hpp"
#include "test_support.hpp"

using namespace medose;

namespace {

ErrorKind load_error(const std::string& text) {
    std::istringstream in(text);
    try {
        load_csv(in);
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::resource;
}

}  // namespace

TEST_CASE("load_csv reads the required columns in any order") {
    std::istringstream in("cluster,response,dose\nA,10.5,0\nB,3.25,1.5\nA,7,1.5\n");
    const Dataset data = load_csv(in);
    REQUIRE(data.size() == 3);
    CHECK(data[1].dose == 1.5);
    CHECK(data[1].response == 3.25);
    CHECK(data[1].cluster_id == "B");
    CHECK(data[1].curve_id == "1");
    CHECK(data.cluster_ids() == std::vector<std::string>{"A", "B"});
    CHECK(data.cluster_index().at("A") == std::vector<std::size_t>{0, 2});
}

TEST_CASE("quoted fields, CRLF and a byte-order mark") {
    std::istringstream in("\xEF\xBB\xBF" "dose,response,cluster,curve\r\n0.5,1,\"assay, 1\",\"x\"\"y\"\r\n");
    const Dataset data = load_csv(in);
    REQUIRE(data.size() == 1);
    CHECK(data[0].cluster_id == "assay, 1");
    CHECK(data[0].curve_id == "x\"y");
}

TEST_CASE("malformed input is classified") {
    CHECK(load_error("dose,response\n1,2\n") == ErrorKind::schema);
    CHECK(load_error("") == ErrorKind::schema);
    CHECK(load_error("dose,response,cluster\n1,abc,A\n") == ErrorKind::parse);
    CHECK(load_error("dose,response,cluster\n1,2\n") == ErrorKind::parse);
    CHECK(load_error("dose,response,cluster\n-1,2,A\n") == ErrorKind::validation);
    CHECK(load_error("dose,response,cluster\n") == ErrorKind::validation);
}

TEST_CASE("errors name the offending row and file") {
    std::istringstream in("dose,response,cluster\n1,2,A\n-3,2,A\n");
    try {
        load_csv(in);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    try {
        load_csv(std::filesystem::path("/nonexistent/assay.csv"));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::io);
        CHECK(std::string(e.what()).find("/nonexistent/assay.csv") != std::string::npos);
    }
}

TEST_CASE("write_csv round trips bit for bit") {
    const Dataset data({{0.1 + 0.2, 1.0 / 3.0, "c,1", "t"}, {1e-300, -2.5e10, "c2", "t"}, {0.0, 7.0, "c2", "u"}});
    std::ostringstream out;
    write_csv(data, out);
    std::istringstream in(out.str());
    const Dataset back = load_csv(in);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(back[i].dose == data[i].dose);
        CHECK(back[i].response == data[i].response);
        CHECK(back[i].cluster_id == data[i].cluster_id);
        CHECK(back[i].curve_id == data[i].curve_id);
    }
    std::ostringstream again;
    write_csv(back, again);
    CHECK(again.str() == out.str());
}

TEST_CASE("summary counts clusters, doses and curves") {
    const Dataset data({{0.0, 1.0, "A", "x"}, {1.0, 2.0, "A", "x"}, {1.0, 5.0, "A", "y"}, {2.0, -1.0, "B", "x"}});
    const DatasetSummary s = summarize(data);
    CHECK(s.clusters == 2);
    CHECK(s.observations == 4);
    CHECK(s.doses_per_cluster.at("A") == 2);
    CHECK(s.doses_per_cluster.at("B") == 1);
    CHECK(s.curves == std::vector<std::string>{"x", "y"});
    CHECK(s.response_min == -1.0);
    CHECK(s.response_max == 5.0);
}

TEST_CASE("subset keeps order and rebuilds the index") {
    const Dataset data({{0.0, 1.0, "A", "1"}, {1.0, 2.0, "B", "1"}, {2.0, 3.0, "A", "1"}});
    const Dataset sub = data.subset({2, 0});
    CHECK(sub[0].dose == 2.0);
    CHECK(sub.cluster_ids() == std::vector<std::string>{"A"});
}

TEST_CASE("read_csv keeps empty fields and escapes survive") {
    std::istringstream in("a,b\n,\"\"\n");
    const CsvTable t = read_csv(in);
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0][0].empty());
    CHECK(csv_escape("plain") == "plain");
    CHECK(csv_escape("a,b") == "\"a,b\"");
    CHECK(std::stod(format_double(0.1)) == 0.1);
}

#include "medose/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>

#include "medose/csv.hpp"
#include "medose/errors.hpp"

namespace medose {

Dataset::Dataset(std::vector<Observation> observations) : observations_(std::move(observations)) {
    if (observations_.empty()) {
        throw Error(ErrorKind::validation, "dataset has no observations");
    }
    for (std::size_t i = 0; i < observations_.size(); ++i) {
        const auto& obs = observations_[i];
        if (!std::isfinite(obs.dose) || obs.dose < 0.0) {
            throw Error(ErrorKind::validation,
                        "observation " + std::to_string(i + 1) + ": dose must be finite and >= 0");
        }
        if (!std::isfinite(obs.response)) {
            throw Error(ErrorKind::validation,
                        "observation " + std::to_string(i + 1) + ": response must be finite");
        }
        cluster_index_[obs.cluster_id].push_back(i);
        curve_index_[obs.curve_id].push_back(i);
    }
}

std::vector<std::string> Dataset::cluster_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, rows] : cluster_index_) ids.push_back(id);
    return ids;
}

std::vector<std::string> Dataset::curve_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, rows] : curve_index_) ids.push_back(id);
    return ids;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    std::vector<Observation> picked;
    picked.reserve(indices.size());
    for (auto i : indices) picked.push_back(observations_.at(i));
    return Dataset(std::move(picked));
}

namespace {

double parse_number(const std::string& cell, const char* column, std::size_t row) {
    double value = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (!cell.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (cell.empty() || ec != std::errc() || ptr != last) {
        throw Error(ErrorKind::parse, "line " + std::to_string(row) + ": cannot parse " + column +
                                          " value '" + cell + "'");
    }
    return value;
}

}  // namespace

Dataset load_csv(std::istream& in) {
    const CsvTable table = read_csv(in);
    const auto dose_col = table.column("dose");
    const auto response_col = table.column("response");
    const auto cluster_col = table.column("cluster");
    const auto curve_col = table.column("curve");
    for (const auto& [name, col] : {std::pair{"dose", dose_col}, std::pair{"response", response_col},
                                    std::pair{"cluster", cluster_col}}) {
        if (!col) throw Error(ErrorKind::schema, std::string("missing required column '") + name + "'");
    }
    std::vector<Observation> obs;
    obs.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t row_no = r + 2;  // file line; the header is line 1
        Observation o;
        o.dose = parse_number(row[*dose_col], "dose", row_no);
        o.response = parse_number(row[*response_col], "response", row_no);
        if (!std::isfinite(o.dose) || o.dose < 0.0) {
            throw Error(ErrorKind::validation,
                        "line " + std::to_string(row_no) + ": dose must be finite and >= 0");
        }
        if (!std::isfinite(o.response)) {
            throw Error(ErrorKind::validation, "line " + std::to_string(row_no) + ": response must be finite");
        }
        o.cluster_id = row[*cluster_col];
        o.curve_id = curve_col ? row[*curve_col] : std::string("1");
        if (o.cluster_id.empty()) {
            throw Error(ErrorKind::validation, "line " + std::to_string(row_no) + ": empty cluster label");
        }
        if (o.curve_id.empty()) {
            throw Error(ErrorKind::validation, "line " + std::to_string(row_no) + ": empty curve label");
        }
        obs.push_back(std::move(o));
    }
    return Dataset(std::move(obs));
}

Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open data file '" + path.string() + "'");
    return load_csv(in);
}

void write_csv(const Dataset& data, std::ostream& out) {
    out << "dose,response,cluster,curve\n";
    for (const auto& o : data.observations()) {
        out << format_double(o.dose) << ',' << format_double(o.response) << ','
            << csv_escape(o.cluster_id) << ',' << csv_escape(o.curve_id) << '\n';
    }
}

DatasetSummary summarize(const Dataset& data) {
    DatasetSummary s;
    s.clusters = data.cluster_index().size();
    s.observations = data.size();
    for (const auto& [id, rows] : data.cluster_index()) {
        std::set<double> levels;
        for (auto i : rows) levels.insert(data[i].dose);
        s.doses_per_cluster[id] = levels.size();
    }
    s.curves = data.curve_ids();
    s.response_min = s.response_max = data[0].response;
    for (const auto& o : data.observations()) {
        s.response_min = std::min(s.response_min, o.response);
        s.response_max = std::max(s.response_max, o.response);
    }
    return s;
}

}  // namespace medose

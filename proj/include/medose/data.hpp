#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace medose {

struct Observation {
    double dose = 0.0;
    double response = 0.0;
    std::string cluster_id;
    std::string curve_id;
};

using GroupIndex = std::map<std::string, std::vector<std::size_t>>;

/// Clustered dose-response data. Immutable once built; cluster and curve
/// labels are opaque strings, iterated in sorted order.
class Dataset {
public:
    explicit Dataset(std::vector<Observation> observations);

    const std::vector<Observation>& observations() const { return observations_; }
    const Observation& operator[](std::size_t i) const { return observations_[i]; }
    std::size_t size() const { return observations_.size(); }

    const GroupIndex& cluster_index() const { return cluster_index_; }
    const GroupIndex& curve_index() const { return curve_index_; }

    std::vector<std::string> cluster_ids() const;
    std::vector<std::string> curve_ids() const;

    /// Subset with only the given observation indices (order preserved).
    Dataset subset(const std::vector<std::size_t>& indices) const;

private:
    std::vector<Observation> observations_;
    GroupIndex cluster_index_;
    GroupIndex curve_index_;
};

/// Columns dose, response, cluster are required; curve is optional and
/// defaults to "1".
Dataset load_csv(std::istream& in);
Dataset load_csv(const std::filesystem::path& path);

/// Writes dose,response,cluster,curve with round-trip precision.
void write_csv(const Dataset& data, std::ostream& out);

struct DatasetSummary {
    std::size_t clusters = 0;
    std::size_t observations = 0;
    std::map<std::string, std::size_t> doses_per_cluster;  // distinct dose levels
    std::vector<std::string> curves;
    double response_min = 0.0;
    double response_max = 0.0;
};

DatasetSummary summarize(const Dataset& data);

}  // namespace medose

#pragma once

// Load-sample datasets: per-bus total demand drawn uniformly around the
// reference demand, persisted as a JSON manifest plus a CSV body.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gnnopf/matpower.hpp"
#include "gnnopf/matrix.hpp"

namespace gnnopf {

inline constexpr int kDatasetFormatVersion = 1;

struct LoadDataset {
  std::string case_name;
  std::string case_digest;
  std::uint64_t seed = 0;
  double low = 0.9;
  double high = 1.1;
  std::vector<int> bus_ids;    // row order of every sample
  std::vector<Matrix> samples; // each N x 2: (Re, Im) total demand per bus, p.u.

  std::size_t n_buses() const { return bus_ids.size(); }
  std::size_t size() const { return samples.size(); }

  bool operator==(const LoadDataset&) const = default;
};

// Per-bus reference demand as an N x 2 matrix in bus order.
Matrix reference_demand(const NetworkCase& net);

LoadDataset sample_loads(const NetworkCase& net, std::size_t n, std::uint64_t seed, double low = 0.9, double high = 1.1);

// Subset in the given order; used for train/validation splits.
LoadDataset subset(const LoadDataset& ds, const std::vector<std::size_t>& indices);

void save_dataset(const LoadDataset& ds, const std::filesystem::path& dir);

struct LoadedDataset {
  LoadDataset dataset;
  std::vector<std::string> warnings;
};

// When `expected_case` is set and differs from the manifest's case name a
// warning is returned alongside the data.
LoadedDataset load_dataset(const std::filesystem::path& dir, const std::optional<std::string>& expected_case = std::nullopt);

} // namespace gnnopf

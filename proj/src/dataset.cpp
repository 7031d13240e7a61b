#include "gnnopf/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gnnopf/error.hpp"

namespace gnnopf {
namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kSamples = "samples.csv";

// Uniform [0, 1) from the top 53 bits; fixed so datasets do not depend on
// the standard library's distribution implementation.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void append_double(std::string& out, double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, end);
}

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw DatasetError("samples.csv line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

} // namespace

Matrix reference_demand(const NetworkCase& net) {
  Matrix d(net.buses.size(), 2);
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    d(i, 0) = net.buses[i].demand_ref.real();
    d(i, 1) = net.buses[i].demand_ref.imag();
  }
  return d;
}

LoadDataset sample_loads(const NetworkCase& net, std::size_t n, std::uint64_t seed, double low, double high) {
  if (n < 1) throw ValidationError("sample count must be at least 1");
  if (!(low >= 0.0) || !(low <= high)) throw ValidationError("sampling bounds must satisfy 0 <= low <= high");

  LoadDataset ds;
  ds.case_name = net.name;
  ds.case_digest = net.digest;
  ds.seed = seed;
  ds.low = low;
  ds.high = high;
  for (const auto& b : net.buses) ds.bus_ids.push_back(b.bus_id);

  const Matrix ref = reference_demand(net);
  std::mt19937_64 rng(seed);
  ds.samples.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    Matrix m(ref.rows, 2);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double u = unit_uniform(rng);
      // low*ref + u*(high-low)*ref; written as ref*(...) so a zero reference
      // stays exactly zero and low == high reproduces ref.
      m.data[i] = ref.data[i] * (low + (high - low) * u);
    }
    ds.samples.push_back(std::move(m));
  }
  return ds;
}

LoadDataset subset(const LoadDataset& ds, const std::vector<std::size_t>& indices) {
  LoadDataset out = ds;
  out.samples.clear();
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(ds.samples.at(i));
  return out;
}

void save_dataset(const LoadDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format_version"] = kDatasetFormatVersion;
  m["case_name"] = ds.case_name;
  m["case_digest"] = ds.case_digest;
  m["seed"] = ds.seed;
  m["low"] = ds.low;
  m["high"] = ds.high;
  m["n_samples"] = ds.samples.size();
  m["n_buses"] = ds.bus_ids.size();
  m["bus_ids"] = ds.bus_ids;
  {
    std::ofstream out(dir / kManifest);
    if (!out) throw DatasetError("cannot write " + (dir / kManifest).string());
    out << m.dump(2) << '\n';
  }

  std::string body = "sample_id,bus_id,p_demand,q_demand\n";
  for (std::size_t s = 0; s < ds.samples.size(); ++s) {
    const Matrix& x = ds.samples[s];
    for (std::size_t i = 0; i < x.rows; ++i) {
      body += std::to_string(s);
      body += ',';
      body += std::to_string(ds.bus_ids[i]);
      body += ',';
      append_double(body, x(i, 0));
      body += ',';
      append_double(body, x(i, 1));
      body += '\n';
    }
  }
  std::ofstream out(dir / kSamples, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + (dir / kSamples).string());
  out << body;
}

LoadedDataset load_dataset(const std::filesystem::path& dir, const std::optional<std::string>& expected_case) {
  LoadedDataset result;
  LoadDataset& ds = result.dataset;

  std::ifstream min(dir / kManifest);
  if (!min) throw DatasetError("cannot open " + (dir / kManifest).string());
  nlohmann::json m;
  try {
    min >> m;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("malformed dataset manifest: " + std::string(e.what()));
  }
  const int version = m.value("format_version", -1);
  if (version != kDatasetFormatVersion) {
    throw DatasetError("dataset format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kDatasetFormatVersion) + ")");
  }
  std::size_t n_samples = 0, n_buses = 0;
  try {
    ds.case_name = m.at("case_name").get<std::string>();
    ds.case_digest = m.value("case_digest", "");
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.low = m.at("low").get<double>();
    ds.high = m.at("high").get<double>();
    n_samples = m.at("n_samples").get<std::size_t>();
    n_buses = m.at("n_buses").get<std::size_t>();
    ds.bus_ids = m.at("bus_ids").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("incomplete dataset manifest: " + std::string(e.what()));
  }
  if (ds.bus_ids.size() != n_buses) throw DatasetError("manifest bus_ids length does not match n_buses");
  if (expected_case && *expected_case != ds.case_name) {
    result.warnings.push_back("dataset manifest names case '" + ds.case_name + "' but '" + *expected_case + "' was requested");
  }

  std::ifstream in(dir / kSamples, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + (dir / kSamples).string());
  std::string line;
  if (!std::getline(in, line) || line != "sample_id,bus_id,p_demand,q_demand") {
    throw DatasetError("samples.csv: missing or unexpected header");
  }
  ds.samples.assign(n_samples, Matrix(n_buses, 2));
  const std::size_t expected_rows = n_samples * n_buses;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= expected_rows) throw DatasetError("samples.csv has more rows than the manifest declares");
    std::string_view v(line);
    std::string_view field[4];
    for (int f = 0; f < 4; ++f) {
      const auto comma = v.find(',');
      if (f < 3 && comma == std::string_view::npos) {
        throw DatasetError("samples.csv line " + std::to_string(row + 2) + ": truncated row");
      }
      field[f] = v.substr(0, f < 3 ? comma : v.size());
      if (f < 3) v.remove_prefix(comma + 1);
    }
    const std::size_t s = row / n_buses;
    const std::size_t i = row % n_buses;
    if (parse_double(field[0], row + 2) != static_cast<double>(s) ||
        parse_double(field[1], row + 2) != static_cast<double>(ds.bus_ids[i])) {
      throw DatasetError("samples.csv line " + std::to_string(row + 2) + ": rows out of order");
    }
    ds.samples[s](i, 0) = parse_double(field[2], row + 2);
    ds.samples[s](i, 1) = parse_double(field[3], row + 2);
    ++row;
  }
  if (row != expected_rows) {
    throw DatasetError("samples.csv is truncated: " + std::to_string(row) + " of " + std::to_string(expected_rows) + " rows");
  }
  return result;
}

} // namespace gnnopf

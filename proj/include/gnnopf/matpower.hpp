#pragma once

// MATPOWER case-file reader. All quantities are converted to per-unit on
// the system MVA base and angles to radians at parse time; out-of-service
// generators and branches are dropped.

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gnnopf {

using Complex = std::complex<double>;

enum class BusType { pq = 1, pv = 2, reference = 3, isolated = 4 };

struct BusRecord {
  int bus_id = 0;
  BusType type = BusType::pq;
  Complex demand_ref;      // p.u.
  Complex shunt_admittance; // Gs + jBs, p.u.
  double v_min = 0.0;
  double v_max = 0.0;

  bool operator==(const BusRecord&) const = default;
};

// Coefficients highest degree first; takes active power in p.u. and returns
// currency per hour.
struct CostPolynomial {
  std::vector<double> coefficients;

  double operator()(double p) const {
    double acc = 0.0;
    for (double c : coefficients) acc = acc * p + c;
    return acc;
  }
  std::size_t degree() const { return coefficients.empty() ? 0 : coefficients.size() - 1; }

  bool operator==(const CostPolynomial&) const = default;
};

struct GenRecord {
  int gen_id = 0; // 1-based row in the source gen matrix
  int bus_id = 0;
  double p_min = 0.0, p_max = 0.0;
  double q_min = 0.0, q_max = 0.0;
  bool in_service = true;
  CostPolynomial cost;

  bool operator==(const GenRecord&) const = default;
};

struct BranchRecord {
  int branch_id = 0; // 1-based row in the source branch matrix
  int from_bus = 0;
  int to_bus = 0;
  Complex series_impedance; // r + jx
  double total_charging = 0.0;
  double tap_ratio = 1.0; // a source value of 0 is stored as 1
  double phase_shift = 0.0; // radians
  std::optional<double> rate_max; // absent: unconstrained
  std::optional<double> ang_min;  // radians; absent: unconstrained
  std::optional<double> ang_max;
  bool in_service = true;

  Complex series_admittance() const { return 1.0 / series_impedance; }
  Complex tap() const { return std::polar(tap_ratio, phase_shift); }

  bool operator==(const BranchRecord&) const = default;
};

struct NetworkCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<BusRecord> buses;
  std::vector<GenRecord> generators;
  std::vector<BranchRecord> branches;
  bool has_cost = false;
  std::string digest; // FNV-1a of the source text, hex

  // Index of a bus id in `buses`; throws ValidationError when unknown.
  std::size_t bus_index(int bus_id) const;
  Complex total_demand() const;

  bool operator==(const NetworkCase&) const = default;
};

// Row counts of the raw matrices as they appear in the file, before any
// out-of-service filtering.
struct RawCounts {
  std::size_t bus = 0, gen = 0, branch = 0, gencost = 0;
};

NetworkCase parse_matpower(std::string_view text);
NetworkCase load_matpower(const std::filesystem::path& path);
RawCounts raw_matrix_counts(std::string_view text);

std::string fnv1a_hex(std::string_view bytes);

} // namespace gnnopf

#pragma once

// Dense, evaluation-ready description of a grid: bus/generator/branch
// arrays, the graph shift operator, and the physics evaluated on plain
// doubles (branch flows, power balance, cost). The differentiable versions
// of the same formulas live in loss.hpp.

#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnnopf/matpower.hpp"
#include "gnnopf/matrix.hpp"

namespace gnnopf {

// Column layout of a bus state matrix X = [p q v delta].
namespace col {
inline constexpr std::size_t p = 0, q = 1, v = 2, delta = 3;
}

struct BusState {
  Matrix x; // N x 4

  BusState() = default;
  explicit BusState(std::size_t n) : x(n, 4) {}
  explicit BusState(Matrix m);

  std::size_t n_buses() const { return x.rows; }
  double p(std::size_t i) const { return x(i, col::p); }
  double q(std::size_t i) const { return x(i, col::q); }
  double v(std::size_t i) const { return x(i, col::v); }
  double delta(std::size_t i) const { return x(i, col::delta); }
  std::vector<double> v_column() const { return x.column_copy(col::v); }
  std::vector<double> delta_column() const { return x.column_copy(col::delta); }
};

// N x 2 (Re, Im) per-bus totals in p.u.
using DemandMatrix = Matrix;
using GenerationMatrix = Matrix;

struct GsoOptions {
  std::optional<double> alpha; // default: ln(2) * median |Y_ij|^2
  double beta = 0.01;
  bool normalize = true;
};

struct GsoStats {
  double alpha = 0.0;
  double beta = 0.0;
  bool normalized = false;
  std::size_t edges_kept = 0;
  std::size_t edges_dropped = 0;
  double spectral_radius_raw = 0.0; // before normalization
};

struct Branch {
  int branch_id = 0;
  std::size_t from = 0;
  std::size_t to = 0;
  Complex y_series;
  Complex y_charge_from; // j b / 2
  Complex y_charge_to;
  Complex tap;
  std::optional<double> rate_max;
  std::optional<double> ang_min;
  std::optional<double> ang_max;
};

struct Generator {
  int gen_id = 0;
  std::size_t bus = 0;
  double p_min = 0.0, p_max = 0.0, q_min = 0.0, q_max = 0.0;
  CostPolynomial cost;
};

struct GridModel {
  std::string case_name;
  std::string case_digest;
  std::size_t n_buses = 0;
  std::vector<int> bus_ids;
  std::vector<double> v_min, v_max;
  std::vector<Complex> shunt;
  std::vector<Generator> generators;
  std::vector<int> gen_at_bus; // generator index per bus, -1 if none
  Matrix gen_lower;            // N x 2 generator box; [0,0] on generator-free buses
  Matrix gen_upper;
  std::vector<Branch> branches;
  std::size_t reference_bus = 0;
  Matrix gso;              // dense, symmetric, zero diagonal
  SparseMatrix gso_sparse; // same operator in CSR form
  GsoStats gso_stats;
  GsoOptions gso_options;

  std::size_t n_branches() const { return branches.size(); }
  bool has_generator(std::size_t bus) const { return gen_at_bus[bus] >= 0; }
};

GridModel build_grid_model(const NetworkCase& net, const GsoOptions& options = {});

// Largest-magnitude eigenvalue of a real symmetric matrix via power
// iteration on A^2; stops when the iterate moves less than `tol`.
double spectral_radius(const Matrix& a, double tol = 1e-9, std::size_t max_iters = 100000);

struct BranchFlows {
  std::vector<Complex> fwd; // S_ij at the from end
  std::vector<Complex> rev; // S_ji at the to end
};

BranchFlows branch_flows(const GridModel& model, std::span<const double> v, std::span<const double> delta);

// residual_i = S_i - conj(Ys_i)|V_i|^2 - sum of flows leaving bus i.
std::vector<Complex> power_balance_residual(const GridModel& model, const BusState& x);

struct LoadEntry {
  std::size_t bus = 0;
  Complex demand;
};
DemandMatrix aggregate_demand(std::size_t n_buses, std::span<const LoadEntry> loads);

GenerationMatrix generation_from_state(const BusState& x, const DemandMatrix& demand);
// [p q] = S^g - S^d
Matrix injections_from_generation(const GenerationMatrix& gen, const DemandMatrix& demand);
BusState make_state(const GenerationMatrix& gen, const DemandMatrix& demand, std::span<const double> v,
                    std::span<const double> delta);

double generation_cost(const GridModel& model, const GenerationMatrix& gen);

} // namespace gnnopf

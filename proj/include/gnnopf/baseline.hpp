#pragma once

// Per-instance baseline: direct minimization of the training loss over the
// state of one demand sample, with the same bounded-sigmoid box
// parametrization as the GNN head.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "gnnopf/dataset.hpp"
#include "gnnopf/grid_model.hpp"
#include "gnnopf/loss.hpp"
#include "gnnopf/metrics.hpp"
#include "gnnopf/trainer.hpp"

namespace gnnopf {

enum class SolveMethod { sgd, adam, lbfgs, newton };

SolveMethod parse_solve_method(const std::string& name);
const char* solve_method_name(SolveMethod m);

// The power balance is enforced by an augmented Lagrangian: each round runs
// a bounded number of inner iterations on total_loss + y . residual, then
// updates y. The barrier slope grows tenfold per round up to penalty.s.
struct SolveConfig {
  std::size_t max_iters = 5000; // inner iterations summed over all rounds
  double step = 1e-2;           // sgd / adam step
  SolveMethod method = SolveMethod::newton;
  PenaltyConfig penalty{.s = 1e5, .t = 10.0, .lambda = 1.0, .mu = 1e4};
  double residual_tolerance = 1e-4; // p.u.
  std::size_t restarts = 3;         // random restarts after the flat start
  std::size_t multiplier_rounds = 25; // inner budget per round is max_iters / rounds
  std::uint64_t seed = 0;
};

void validate(const SolveConfig& cfg);

struct SolveResult {
  BusState state;
  FeasibilityReport report;
  bool converged = false;
  double loss = 0.0; // total loss under cfg.penalty
  double cost = 0.0;
  std::size_t iterations = 0;
  std::size_t restart = 0; // which start produced the result
};

// One descent run from logits z0 (N x 4: pg, qg, v, delta).
SolveResult solve_from(const GridModel& model, const DemandMatrix& demand, const Matrix& z0, const SolveConfig& cfg);

// Flat start then `restarts` random starts; the lowest-loss run is returned.
SolveResult solve_instance(const GridModel& model, const DemandMatrix& demand, const SolveConfig& cfg);

struct BatchResult {
  std::vector<SolveResult> results;
  std::vector<std::size_t> discarded; // non-converged sample indices
  double convergence_fraction() const;
};

BatchResult batch_solve(const GridModel& model, const LoadDataset& ds, const SolveConfig& cfg, std::size_t workers = 1);

// results.json ({sample_id, converged, cost, violation_rate, max_residual}
// per sample) and states.csv (sample_id,bus_id,p,q,v,delta).
void write_batch(const BatchResult& b, const GridModel& model, const std::filesystem::path& dir);
std::vector<BaselineEntry> read_baseline_entries(const std::filesystem::path& dir);

} // namespace gnnopf

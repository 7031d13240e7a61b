#pragma once

// Unsupervised training objective: generation cost plus extended
// log-barrier penalties on inequalities and squared penalties on the
// power-balance equalities.

#include <vector>

#include "gnnopf/grid_model.hpp"
#include "gnnopf/tape.hpp"

namespace gnnopf {

struct PenaltyConfig {
  double s = 10.0;      // maximum barrier slope
  double t = 500.0;     // barrier scale
  double lambda = 1.0;  // inequality weight
  double mu = 100.0;    // equality weight
};

void validate(const PenaltyConfig& cfg);

// log(u) for u >= 1/s, otherwise s(u - 1/s) + log(1/s). C^1 at the knot.
double extended_log(double u, double s);
// min(1/u, s) for u > 0, s otherwise.
double extended_log_derivative(double u, double s);

// -(1/t) * extended_log(-g)
double inequality_penalty(double g, const PenaltyConfig& cfg);
inline double equality_penalty(double h) { return h * h; }

// Per-model arrays consumed by the recorded loss. Spans recorded on a tape
// point into this object, so it must outlive every tape that uses it.
struct LossContext {
  std::size_t n_buses = 0;
  std::vector<std::size_t> from, to;
  std::vector<double> g, b, half_bc, inv_tau, inv_tau2, phase;
  std::vector<double> shunt_g, shunt_b;
  std::vector<std::size_t> rated;   // branches with a rate limit
  std::vector<double> rate_max2;    // S_max^2 for those branches
  std::vector<std::size_t> ang_lo_branch, ang_hi_branch;
  std::vector<double> ang_lo, ang_hi;
  std::vector<std::size_t> ang_lo_from, ang_lo_to, ang_hi_from, ang_hi_to;
  std::vector<std::size_t> gen_bus;
  std::vector<std::vector<double>> cost_coeff; // [degree term][generator], highest degree first
  std::vector<std::size_t> reference_rows;     // N copies of the reference bus index
  // Head boxes per bus; [0, 0] for generation on generator-free buses.
  std::vector<double> pg_lo, pg_hi, qg_lo, qg_hi, v_lo, v_hi;
};

LossContext make_loss_context(const GridModel& model);

// Columns of a bus state on a tape, each N x 1. pg/qg are total generation.
struct StateVars {
  ad::Var pg, qg, p, q, v, delta;
};

struct LossTerms {
  ad::Var total;
  ad::Var cost;
  ad::Var inequality; // lambda * sum phi
  ad::Var equality;   // mu * sum psi
  ad::Var res_p, res_q; // power-balance residuals, N x 1
};

// Branch flows on the tape; each output is E x 1.
struct FlowVars {
  ad::Var p_fwd, q_fwd, p_rev, q_rev;
};
FlowVars record_branch_flows(ad::Tape& tape, const LossContext& ctx, ad::Var v, ad::Var delta);

// State columns for a given state / demand pair (all constants).
StateVars record_state(ad::Tape& tape, const BusState& x, const DemandMatrix& demand);

LossTerms record_loss(ad::Tape& tape, const LossContext& ctx, const StateVars& x, const PenaltyConfig& cfg);

struct LossValue {
  double total = 0.0, cost = 0.0, inequality = 0.0, equality = 0.0;
};

// Plain evaluation of the loss at a bus state.
LossValue total_loss(const GridModel& model, const BusState& x, const DemandMatrix& demand, const PenaltyConfig& cfg);

} // namespace gnnopf

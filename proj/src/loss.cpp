#include "gnnopf/loss.hpp"

#include <algorithm>
#include <cmath>

#include "gnnopf/error.hpp"

namespace gnnopf {

void validate(const PenaltyConfig& cfg) {
  if (!(cfg.s > 0.0)) throw ValidationError("penalty s must be positive");
  if (!(cfg.t > 0.0)) throw ValidationError("penalty t must be positive");
  if (!(cfg.lambda >= 0.0)) throw ValidationError("penalty lambda must be non-negative");
  if (!(cfg.mu >= 0.0)) throw ValidationError("penalty mu must be non-negative");
}

// The published piecewise form s(u + 1/s) - log(1/s) jumps at the knot
// (2 + log s on the left vs -log s on the right). The continuous variant
// below is the one whose derivative is min(1/u, s).
double extended_log(double u, double s) {
  const double knot = 1.0 / s;
  return u >= knot ? std::log(u) : s * (u - knot) + std::log(knot);
}

double extended_log_derivative(double u, double s) { return u > 0.0 ? std::min(1.0 / u, s) : s; }

double inequality_penalty(double g, const PenaltyConfig& cfg) { return -(1.0 / cfg.t) * extended_log(-g, cfg.s); }

LossContext make_loss_context(const GridModel& model) {
  LossContext c;
  c.n_buses = model.n_buses;
  for (std::size_t k = 0; k < model.n_branches(); ++k) {
    const Branch& br = model.branches[k];
    c.from.push_back(br.from);
    c.to.push_back(br.to);
    c.g.push_back(br.y_series.real());
    c.b.push_back(br.y_series.imag());
    c.half_bc.push_back(br.y_charge_from.imag());
    const double tau = std::abs(br.tap);
    c.inv_tau.push_back(1.0 / tau);
    c.inv_tau2.push_back(1.0 / (tau * tau));
    c.phase.push_back(std::arg(br.tap));
    if (br.rate_max) {
      c.rated.push_back(k);
      c.rate_max2.push_back(*br.rate_max * *br.rate_max);
    }
    if (br.ang_min) {
      c.ang_lo_branch.push_back(k);
      c.ang_lo.push_back(*br.ang_min);
      c.ang_lo_from.push_back(br.from);
      c.ang_lo_to.push_back(br.to);
    }
    if (br.ang_max) {
      c.ang_hi_branch.push_back(k);
      c.ang_hi.push_back(*br.ang_max);
      c.ang_hi_from.push_back(br.from);
      c.ang_hi_to.push_back(br.to);
    }
  }
  for (std::size_t i = 0; i < model.n_buses; ++i) {
    c.shunt_g.push_back(model.shunt[i].real());
    c.shunt_b.push_back(model.shunt[i].imag());
  }
  std::size_t degree = 0;
  for (const auto& g : model.generators) {
    c.gen_bus.push_back(g.bus);
    degree = std::max(degree, g.cost.degree());
  }
  if (!model.generators.empty()) {
    c.cost_coeff.assign(degree + 1, std::vector<double>(model.generators.size(), 0.0));
    for (std::size_t j = 0; j < model.generators.size(); ++j) {
      const auto& coeffs = model.generators[j].cost.coefficients;
      // right-align so every row is padded with leading zeros
      const std::size_t pad = degree + 1 - coeffs.size();
      for (std::size_t i = 0; i < coeffs.size(); ++i) c.cost_coeff[pad + i][j] = coeffs[i];
    }
  }
  c.reference_rows.assign(model.n_buses, model.reference_bus);
  c.pg_lo = model.gen_lower.column_copy(0);
  c.pg_hi = model.gen_upper.column_copy(0);
  c.qg_lo = model.gen_lower.column_copy(1);
  c.qg_hi = model.gen_upper.column_copy(1);
  c.v_lo = model.v_min;
  c.v_hi = model.v_max;
  return c;
}

namespace {

ad::Var column(ad::Tape& tape, const std::vector<double>& v) { return tape.constant(v.size(), 1, v); }

} // namespace

FlowVars record_branch_flows(ad::Tape& tape, const LossContext& ctx, ad::Var v, ad::Var delta) {
  const auto g = column(tape, ctx.g);
  const auto b = column(tape, ctx.b);
  std::vector<double> b_total(ctx.b.size());
  for (std::size_t k = 0; k < b_total.size(); ++k) b_total[k] = ctx.b[k] + ctx.half_bc[k];
  const auto bb = column(tape, b_total);

  const auto vf = tape.gather_rows(v, ctx.from);
  const auto vt = tape.gather_rows(v, ctx.to);
  const auto theta = tape.sub(tape.sub(tape.gather_rows(delta, ctx.from), tape.gather_rows(delta, ctx.to)),
                              column(tape, ctx.phase));
  const auto c = tape.cos(theta);
  const auto s = tape.sin(theta);
  const auto vv = tape.mul(tape.mul(vf, vt), column(tape, ctx.inv_tau));
  const auto vf2 = tape.mul(tape.square(vf), column(tape, ctx.inv_tau2));
  const auto vt2 = tape.square(vt);
  const auto gc = tape.mul(g, c);
  const auto bs = tape.mul(b, s);
  const auto gs = tape.mul(g, s);
  const auto bc = tape.mul(b, c);

  FlowVars f;
  f.p_fwd = tape.sub(tape.mul(g, vf2), tape.mul(vv, tape.add(gc, bs)));
  f.q_fwd = tape.sub(tape.neg(tape.mul(bb, vf2)), tape.mul(vv, tape.sub(gs, bc)));
  f.p_rev = tape.sub(tape.mul(g, vt2), tape.mul(vv, tape.sub(gc, bs)));
  f.q_rev = tape.add(tape.neg(tape.mul(bb, vt2)), tape.mul(vv, tape.add(gs, bc)));
  return f;
}

StateVars record_state(ad::Tape& tape, const BusState& x, const DemandMatrix& demand) {
  const std::size_t n = x.n_buses();
  if (demand.rows != n || demand.cols != 2) throw ShapeError("demand " + shape_str(demand) + " does not match state");
  const auto gen = generation_from_state(x, demand);
  StateVars s;
  s.p = column(tape, x.x.column_copy(col::p));
  s.q = column(tape, x.x.column_copy(col::q));
  s.v = column(tape, x.x.column_copy(col::v));
  s.delta = column(tape, x.x.column_copy(col::delta));
  s.pg = column(tape, gen.column_copy(0));
  s.qg = column(tape, gen.column_copy(1));
  return s;
}

LossTerms record_loss(ad::Tape& tape, const LossContext& ctx, const StateVars& x, const PenaltyConfig& cfg) {
  const std::size_t n = ctx.n_buses;
  LossTerms out;

  // Generation cost: Horner over the padded coefficient rows.
  if (ctx.gen_bus.empty()) {
    out.cost = tape.constant(Matrix(1, 1));
  } else {
    const auto pg = tape.gather_rows(x.pg, ctx.gen_bus);
    auto acc = column(tape, ctx.cost_coeff.front());
    for (std::size_t k = 1; k < ctx.cost_coeff.size(); ++k) acc = tape.add(tape.mul(acc, pg), column(tape, ctx.cost_coeff[k]));
    out.cost = tape.sum(acc);
  }

  const FlowVars f = record_branch_flows(tape, ctx, x.v, x.delta);

  // Power balance residuals.
  const auto v2 = tape.square(x.v);
  auto res_p = tape.sub(x.p, tape.mul(column(tape, ctx.shunt_g), v2));
  auto res_q = tape.add(x.q, tape.mul(column(tape, ctx.shunt_b), v2));
  res_p = tape.sub(res_p, tape.scatter_rows(f.p_fwd, ctx.from, n));
  res_p = tape.sub(res_p, tape.scatter_rows(f.p_rev, ctx.to, n));
  res_q = tape.sub(res_q, tape.scatter_rows(f.q_fwd, ctx.from, n));
  res_q = tape.sub(res_q, tape.scatter_rows(f.q_rev, ctx.to, n));
  const auto psi = tape.add(tape.sum(tape.square(res_p)), tape.sum(tape.square(res_q)));
  out.equality = tape.scale(psi, cfg.mu);
  out.res_p = res_p;
  out.res_q = res_q;

  // Inequalities g <= 0, penalized by -(1/t) extlog_s(-g).
  std::vector<ad::Var> phis;
  auto barrier = [&](ad::Var g) {
    phis.push_back(tape.sum(tape.scale(tape.ext_log(tape.neg(g), cfg.s), -1.0 / cfg.t)));
  };
  if (!ctx.rated.empty()) {
    const auto smax2 = column(tape, ctx.rate_max2);
    const auto sf2 = tape.add(tape.square(tape.gather_rows(f.p_fwd, ctx.rated)), tape.square(tape.gather_rows(f.q_fwd, ctx.rated)));
    const auto sr2 = tape.add(tape.square(tape.gather_rows(f.p_rev, ctx.rated)), tape.square(tape.gather_rows(f.q_rev, ctx.rated)));
    barrier(tape.sub(sf2, smax2));
    barrier(tape.sub(sr2, smax2));
  }
  if (!ctx.ang_hi.empty()) {
    const auto diff = tape.sub(tape.gather_rows(x.delta, ctx.ang_hi_from), tape.gather_rows(x.delta, ctx.ang_hi_to));
    barrier(tape.sub(diff, column(tape, ctx.ang_hi)));
  }
  if (!ctx.ang_lo.empty()) {
    const auto diff = tape.sub(tape.gather_rows(x.delta, ctx.ang_lo_from), tape.gather_rows(x.delta, ctx.ang_lo_to));
    barrier(tape.sub(column(tape, ctx.ang_lo), diff));
  }
  if (phis.empty()) {
    out.inequality = tape.constant(Matrix(1, 1));
  } else {
    auto total = phis.front();
    for (std::size_t i = 1; i < phis.size(); ++i) total = tape.add(total, phis[i]);
    out.inequality = tape.scale(total, cfg.lambda);
  }

  out.total = tape.add(tape.add(out.cost, out.inequality), out.equality);
  return out;
}

LossValue total_loss(const GridModel& model, const BusState& x, const DemandMatrix& demand, const PenaltyConfig& cfg) {
  const LossContext ctx = make_loss_context(model);
  ad::Tape tape;
  const StateVars s = record_state(tape, x, demand);
  const LossTerms t = record_loss(tape, ctx, s, cfg);
  return {tape.scalar(t.total), tape.scalar(t.cost), tape.scalar(t.inequality), tape.scalar(t.equality)};
}

} // namespace gnnopf

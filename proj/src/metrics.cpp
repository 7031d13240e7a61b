#include "gnnopf/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "gnnopf/error.hpp"

namespace gnnopf {

const char* kind_name(ConstraintKind k) {
  switch (k) {
  case ConstraintKind::gen_p: return "gen_p";
  case ConstraintKind::gen_q: return "gen_q";
  case ConstraintKind::voltage_mag: return "voltage_mag";
  case ConstraintKind::rate_fwd: return "rate_fwd";
  case ConstraintKind::rate_rev: return "rate_rev";
  case ConstraintKind::angle_diff: return "angle_diff";
  }
  return "?";
}

std::vector<ConstraintMargin> inequality_margins(const GridModel& model, const BusState& x, const DemandMatrix& demand) {
  if (x.n_buses() != model.n_buses) throw ShapeError("state does not match model");
  const GenerationMatrix gen = generation_from_state(x, demand);
  std::vector<ConstraintMargin> out;
  const std::size_t n = model.n_buses;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({ConstraintKind::gen_p, i, gen(i, 0), model.gen_lower(i, 0), model.gen_upper(i, 0)});
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({ConstraintKind::gen_q, i, gen(i, 1), model.gen_lower(i, 1), model.gen_upper(i, 1)});
  for (std::size_t i = 0; i < n; ++i) out.push_back({ConstraintKind::voltage_mag, i, x.v(i), model.v_min[i], model.v_max[i]});

  const auto v = x.v_column();
  const auto d = x.delta_column();
  const BranchFlows flows = branch_flows(model, v, d);
  for (std::size_t k = 0; k < model.n_branches(); ++k) {
    if (const auto& r = model.branches[k].rate_max) out.push_back({ConstraintKind::rate_fwd, k, std::abs(flows.fwd[k]), 0.0, *r});
  }
  for (std::size_t k = 0; k < model.n_branches(); ++k) {
    if (const auto& r = model.branches[k].rate_max) out.push_back({ConstraintKind::rate_rev, k, std::abs(flows.rev[k]), 0.0, *r});
  }
  for (std::size_t k = 0; k < model.n_branches(); ++k) {
    const Branch& b = model.branches[k];
    if (b.ang_min || b.ang_max) out.push_back({ConstraintKind::angle_diff, k, d[b.from] - d[b.to], b.ang_min, b.ang_max});
  }
  return out;
}

double absolute_error(double value, std::optional<double> lower, std::optional<double> upper) {
  double e = 0.0;
  if (upper) e += std::max(value - *upper, 0.0);
  if (lower) e += std::max(*lower - value, 0.0);
  return e;
}

std::vector<double> relative_errors(std::span<const ConstraintMargin> margins) {
  auto width = [](const ConstraintMargin& m) -> double {
    if (m.lower && m.upper) return std::abs(*m.upper - *m.lower);
    return 0.0; // undefined for one-sided boxes
  };
  std::array<double, kConstraintKinds> sum{};
  std::array<std::size_t, kConstraintKinds> positive{};
  std::array<std::size_t, kConstraintKinds> seen{};
  for (const auto& m : margins) {
    const auto k = static_cast<std::size_t>(m.kind);
    ++seen[k];
    if (const double w = width(m); w > 0.0) {
      sum[k] += w;
      ++positive[k];
    }
  }
  for (std::size_t k = 0; k < kConstraintKinds; ++k) {
    if (seen[k] > 0 && positive[k] == 0) {
      throw ValidationError(std::string("constraint kind ") + kind_name(static_cast<ConstraintKind>(k)) +
                            " has no positive box width to normalize by");
    }
  }
  std::vector<double> rel;
  rel.reserve(margins.size());
  for (const auto& m : margins) {
    const auto k = static_cast<std::size_t>(m.kind);
    const double w = width(m);
    const double eta = w > 0.0 ? w : sum[k] / static_cast<double>(positive[k]);
    rel.push_back(absolute_error(m.value, m.lower, m.upper) / eta);
  }
  return rel;
}

double violation_rate(std::span<const double> relative) {
  if (relative.empty()) throw ValidationError("violation rate of an empty constraint set");
  const auto bad = std::count_if(relative.begin(), relative.end(), [](double e) { return e > 0.0; });
  return static_cast<double>(bad) / static_cast<double>(relative.size());
}

std::size_t FeasibilityReport::violation_count() const {
  std::size_t n = 0;
  for (const auto& k : per_kind) n += k.violations;
  return n;
}

FeasibilityReport feasibility_report(const GridModel& model, const BusState& x, const DemandMatrix& demand,
                                     double equality_tolerance) {
  FeasibilityReport r;
  r.equality_tolerance = equality_tolerance;
  r.margins = inequality_margins(model, x, demand);
  r.relative = relative_errors(r.margins);
  r.violation_rate = violation_rate(r.relative);
  for (std::size_t i = 0; i < r.margins.size(); ++i) {
    auto& s = r.per_kind[static_cast<std::size_t>(r.margins[i].kind)];
    ++s.count;
    if (r.relative[i] > 0.0) ++s.violations;
    s.max_relative = std::max(s.max_relative, r.relative[i]);
    s.mean_relative += r.relative[i];
  }
  for (auto& s : r.per_kind)
    if (s.count) s.mean_relative /= static_cast<double>(s.count);
  for (const auto& res : power_balance_residual(model, x)) r.max_equality_residual = std::max(r.max_equality_residual, std::abs(res));
  r.generation_cost = generation_cost(model, generation_from_state(x, demand));
  return r;
}

nlohmann::json to_json(const FeasibilityReport& r) {
  nlohmann::json j;
  j["violation_rate"] = r.violation_rate;
  j["violation_count"] = r.violation_count();
  j["instances"] = r.margins.size();
  j["max_equality_residual"] = r.max_equality_residual;
  j["equality_tolerance"] = r.equality_tolerance;
  j["generation_cost"] = r.generation_cost;
  nlohmann::json kinds = nlohmann::json::object();
  for (std::size_t k = 0; k < kConstraintKinds; ++k) {
    const auto& s = r.per_kind[k];
    if (!s.count) continue;
    kinds[kind_name(static_cast<ConstraintKind>(k))] = {
        {"count", s.count}, {"violations", s.violations}, {"max_relative_error", s.max_relative}, {"mean_relative_error", s.mean_relative}};
  }
  j["per_kind"] = kinds;
  return j;
}

} // namespace gnnopf

#pragma once

// Constraint-violation metrics: per-instance margins, absolute and
// normalized errors, and the inequality violation rate.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnnopf/grid_model.hpp"

namespace gnnopf {

enum class ConstraintKind { gen_p, gen_q, voltage_mag, rate_fwd, rate_rev, angle_diff };
inline constexpr std::size_t kConstraintKinds = 6;

const char* kind_name(ConstraintKind k);

struct ConstraintMargin {
  ConstraintKind kind = ConstraintKind::gen_p;
  std::size_t element = 0; // bus index (gen/voltage) or branch index
  double value = 0.0;
  std::optional<double> lower;
  std::optional<double> upper;
};

// One margin per bounded constraint instance, ordered by kind. Generator
// margins cover every bus; generator-free buses carry the box [0, 0].
std::vector<ConstraintMargin> inequality_margins(const GridModel& model, const BusState& x, const DemandMatrix& demand);

// (value - upper)^+ + (lower - value)^+; an absent bound contributes 0.
double absolute_error(double value, std::optional<double> lower, std::optional<double> upper);

// Absolute error divided by the box width, or by the mean positive width of
// the same kind when the box is degenerate or one-sided.
std::vector<double> relative_errors(std::span<const ConstraintMargin> margins);

// Fraction of entries that are strictly positive.
double violation_rate(std::span<const double> relative);

struct KindSummary {
  std::size_t count = 0;
  std::size_t violations = 0;
  double max_relative = 0.0;
  double mean_relative = 0.0;
};

struct FeasibilityReport {
  double violation_rate = 0.0;
  std::array<KindSummary, kConstraintKinds> per_kind{};
  double max_equality_residual = 0.0; // max |residual_i|, p.u.
  double equality_tolerance = 1e-4;
  double generation_cost = 0.0;
  std::vector<ConstraintMargin> margins;
  std::vector<double> relative;

  std::size_t violation_count() const;
  bool equality_satisfied() const { return max_equality_residual <= equality_tolerance; }
};

FeasibilityReport feasibility_report(const GridModel& model, const BusState& x, const DemandMatrix& demand,
                                     double equality_tolerance = 1e-4);

nlohmann::json to_json(const FeasibilityReport& r);

} // namespace gnnopf

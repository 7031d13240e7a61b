#include <doctest.h>

#include <cmath>

#include "gnnopf/error.hpp"
#include "gnnopf/gnn.hpp"
#include "gnnopf/metrics.hpp"
#include "support.hpp"

using namespace gnnopf;

namespace {

ConstraintMargin margin(ConstraintKind k, double value, std::optional<double> lo, std::optional<double> hi) {
  return {k, 0, value, lo, hi};
}

BusState random_state(std::mt19937_64& rng, const GridModel& m) {
  BusState x(m.n_buses);
  for (std::size_t i = 0; i < m.n_buses; ++i) {
    x.x(i, col::p) = testing::uniform(rng, -0.6, 0.6);
    x.x(i, col::q) = testing::uniform(rng, -0.3, 0.3);
    x.x(i, col::v) = testing::uniform(rng, 0.9, 1.1);
    x.x(i, col::delta) = testing::uniform(rng, -0.3, 0.3);
  }
  return x;
}

} // namespace

TEST_CASE("absolute error") {
  CHECK(absolute_error(5.0, 0.0, 4.0) == 1.0);
  CHECK(absolute_error(-1.0, 0.0, 4.0) == 1.0);
  CHECK(absolute_error(2.0, 0.0, 4.0) == 0.0);
  CHECK(absolute_error(9.0, std::nullopt, std::nullopt) == 0.0);
  CHECK(absolute_error(9.0, 0.0, std::nullopt) == 0.0);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double a = testing::uniform(rng, -5, 5), b = testing::uniform(rng, -5, 5);
    CHECK(std::abs(absolute_error(a, -1.0, 2.0) - absolute_error(b, -1.0, 2.0)) <= std::abs(a - b) + 1e-15);
  }
}

TEST_CASE("relative errors") {
  SUBCASE("ratio to the box width") {
    const std::vector<ConstraintMargin> ms{margin(ConstraintKind::voltage_mag, 1.105, 1.0, 1.1)};
    CHECK(relative_errors(ms)[0] == doctest::Approx(0.05).epsilon(1e-12));
  }
  SUBCASE("degenerate box falls back to the kind's mean width") {
    const std::vector<ConstraintMargin> ms{margin(ConstraintKind::gen_p, 0.01, 0.0, 0.0),
                                           margin(ConstraintKind::gen_p, 0.1, 0.0, 0.1),
                                           margin(ConstraintKind::gen_p, 0.1, 0.0, 0.3)};
    const auto r = relative_errors(ms);
    CHECK(r[0] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(r[1] == 0.0);
  }
  SUBCASE("feasible margins give zeros") {
    const std::vector<ConstraintMargin> ms{margin(ConstraintKind::rate_fwd, 0.3, 0.0, 1.0),
                                           margin(ConstraintKind::angle_diff, 0.1, -0.5, 0.5)};
    for (double e : relative_errors(ms)) CHECK(e == 0.0);
  }
  SUBCASE("a kind with no positive width cannot be normalized") {
    const std::vector<ConstraintMargin> ms{margin(ConstraintKind::gen_q, 0.1, 0.0, 0.0)};
    CHECK_THROWS_AS(relative_errors(ms), ValidationError);
  }
  SUBCASE("scaling widths does not change which entries violate") {
    std::mt19937_64 rng(3);
    std::vector<ConstraintMargin> a, b;
    for (int i = 0; i < 200; ++i) {
      const double lo = testing::uniform(rng, -1, 0), hi = lo + testing::uniform(rng, 0.1, 1.0);
      const double v = testing::uniform(rng, -1.5, 1.5);
      a.push_back(margin(ConstraintKind::voltage_mag, v, lo, hi));
      b.push_back(margin(ConstraintKind::voltage_mag, 3.0 * v, 3.0 * lo, 3.0 * hi));
    }
    const auto ra = relative_errors(a), rb = relative_errors(b);
    for (std::size_t i = 0; i < ra.size(); ++i) CHECK((ra[i] > 0.0) == (rb[i] > 0.0));
  }
}

TEST_CASE("violation rate") {
  CHECK(violation_rate(std::vector<double>(5, 0.0)) == 0.0);
  std::vector<double> one(10, 0.0);
  one[3] = 0.2;
  CHECK(violation_rate(one) == doctest::Approx(0.1));
  CHECK_THROWS_AS(violation_rate(std::vector<double>{}), ValidationError);
}

TEST_CASE("margins on the two-bus fixture") {
  NetworkCase c = testing::two_bus();
  c.branches[0].rate_max = 0.3; // overloaded at the golden state
  const GridModel m = build_grid_model(c);
  BusState x(2);
  x.x = Matrix(2, 4, {0.6, 0.1, 1.03, 0.0, -0.5, -0.2, 1.0, -0.05});
  const Matrix demand(2, 2, {0.0, 0.0, 0.5, 0.2});
  const auto ms = inequality_margins(m, x, demand);
  // flows leaving each bus from the high-precision residual golden
  const Complex s12 = Complex(0.6, 0.1) - Complex(0.058442895761216285, -0.15710760750796929);
  const Complex s21 = Complex(-0.5, -0.2) - Complex(0.038117041281982199, 0.04331597793995412);
  std::size_t rate = 0;
  for (const auto& mg : ms) {
    if (mg.kind == ConstraintKind::rate_fwd) {
      CHECK(mg.value == doctest::Approx(std::abs(s12)).epsilon(1e-12));
      ++rate;
    }
    if (mg.kind == ConstraintKind::rate_rev) {
      CHECK(mg.value == doctest::Approx(std::abs(s21)).epsilon(1e-12));
      ++rate;
    }
    CHECK(mg.kind != ConstraintKind::angle_diff);
  }
  CHECK(rate == 2);
  const FeasibilityReport r = feasibility_report(m, x, demand);
  CHECK(r.per_kind[static_cast<std::size_t>(ConstraintKind::rate_fwd)].violations == 1);
  CHECK(r.per_kind[static_cast<std::size_t>(ConstraintKind::rate_rev)].violations == 1);
  CHECK(r.violation_rate == doctest::Approx(2.0 / static_cast<double>(ms.size())));

  c.branches[0].rate_max.reset();
  const GridModel free = build_grid_model(c);
  for (const auto& mg : inequality_margins(free, x, demand)) {
    CHECK(mg.kind != ConstraintKind::rate_fwd);
    CHECK(mg.kind != ConstraintKind::rate_rev);
  }
}

TEST_CASE("report on a network output") {
  const GridModel& m = testing::case30_model();
  const Matrix demand = reference_demand(testing::case30());
  GnnParams p = init_params({});
  p.assign(std::vector<double>(p.count(), 0.0));
  const BusState x = gnn_forward(p, m, demand);
  const FeasibilityReport a = feasibility_report(m, x, demand);
  const FeasibilityReport b = feasibility_report(m, x, demand);
  CHECK(to_json(a) == to_json(b));
  CHECK(a.per_kind[static_cast<std::size_t>(ConstraintKind::gen_p)].violations == 0);
  CHECK(a.per_kind[static_cast<std::size_t>(ConstraintKind::voltage_mag)].violations == 0);
  // 30 + 30 + 30 head-bounded instances and 41 + 41 rate limits
  CHECK(a.margins.size() == 172);
  CHECK(a.violation_rate >= 0.0);
  CHECK(a.violation_rate <= 1.0);
  CHECK((a.violation_rate == 0.0) == (a.violation_count() == 0));
}

TEST_CASE("rate is bounded and zero exactly when nothing is violated") {
  const GridModel& m = testing::case30_model();
  const Matrix demand = reference_demand(testing::case30());
  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    const FeasibilityReport r = feasibility_report(m, random_state(rng, m), demand);
    CHECK(r.violation_rate >= 0.0);
    CHECK(r.violation_rate <= 1.0);
    bool any = false;
    for (const auto& mg : r.margins) any |= absolute_error(mg.value, mg.lower, mg.upper) > 0.0;
    CHECK((r.violation_rate == 0.0) == !any);
  }
}

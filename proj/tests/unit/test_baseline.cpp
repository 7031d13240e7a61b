#include <doctest.h>

#include <cmath>

#include "gnnopf/baseline.hpp"
#include "gnnopf/error.hpp"
#include "support.hpp"

using namespace gnnopf;

namespace {

// Cheapest point of a refined 50^4 lattice over (Pg, v1, v2, delta2) with
// the balance enforced to the lattice resolution; see tests/oracles.
constexpr double kLatticeCost = 533.53608938;

void check_converged_invariants(const GridModel& m, const SolveResult& r, const SolveConfig& cfg) {
  REQUIRE(r.converged);
  CHECK(r.report.max_equality_residual <= cfg.residual_tolerance);
  for (std::size_t i = 0; i < r.report.margins.size(); ++i) CHECK(r.report.relative[i] == 0.0);
  CHECK(r.state.delta(m.reference_bus) == 0.0);
}

} // namespace

TEST_CASE("two-bus optimum matches the brute-force oracle") {
  const GridModel& m = testing::two_bus_model();
  const SolveConfig cfg;
  const SolveResult r = solve_instance(m, reference_demand(testing::two_bus()), cfg);
  check_converged_invariants(m, r, cfg);
  CHECK(std::abs(r.cost - kLatticeCost) <= 0.01 * kLatticeCost);
  // tighter: continuous optimum of the same problem
  CHECK(r.cost == doctest::Approx(532.93070812).epsilon(1e-5));
}

TEST_CASE("demand beyond generation capacity does not converge") {
  const GridModel& m = testing::two_bus_model();
  Matrix demand = reference_demand(testing::two_bus());
  demand(1, 0) = 3.0; // capacity is 2 p.u.
  SolveConfig cfg;
  cfg.restarts = 1;
  const SolveResult r = solve_instance(m, demand, cfg);
  CHECK_FALSE(r.converged);
}

TEST_CASE("case30 reference demand") {
  const GridModel& m = testing::case30_model();
  SolveConfig cfg;
  cfg.restarts = 0;
  const SolveResult r = solve_instance(m, reference_demand(testing::case30()), cfg);
  check_converged_invariants(m, r, cfg);
  CHECK(r.report.violation_rate == 0.0);
  // the independent interior-point optimum is 576.8923; barriers keep this
  // one slightly inside the binding limits
  CHECK(r.cost >= 576.8923368462 - 1e-6);
  CHECK(r.cost <= 576.8923368462 * 1.005);
  const LossValue l = total_loss(m, r.state, reference_demand(testing::case30()), cfg.penalty);
  CHECK(l.cost == doctest::Approx(r.cost).epsilon(1e-12));
}

TEST_CASE("uniform angle shift of the start does not change the result") {
  const GridModel& m = testing::two_bus_model();
  const Matrix demand = reference_demand(testing::two_bus());
  const SolveConfig cfg;
  Matrix z0(2, 4);
  const SolveResult a = solve_from(m, demand, z0, cfg);
  for (std::size_t i = 0; i < 2; ++i) z0(i, 3) += 0.7;
  const SolveResult b = solve_from(m, demand, z0, cfg);
  CHECK(std::abs(a.cost - b.cost) <= 1e-6);
  CHECK_THROWS_AS(solve_from(m, demand, Matrix(3, 4), cfg), ShapeError);
}

TEST_CASE("best restart has the lowest loss") {
  const GridModel& m = testing::two_bus_model();
  const Matrix demand = reference_demand(testing::two_bus());
  SolveConfig cfg;
  cfg.restarts = 0;
  const SolveResult flat = solve_instance(m, demand, cfg);
  cfg.restarts = 3;
  const SolveResult best = solve_instance(m, demand, cfg);
  CHECK(best.loss <= flat.loss);
  CHECK(best.restart <= 3);
}

TEST_CASE("batch solving") {
  const GridModel& m = testing::two_bus_model();
  const NetworkCase& net = testing::two_bus();
  SolveConfig cfg;
  cfg.restarts = 0;

  SUBCASE("empty dataset") {
    LoadDataset ds = sample_loads(net, 1, 1);
    ds.samples.clear();
    const BatchResult b = batch_solve(m, ds, cfg);
    CHECK(b.results.empty());
    CHECK(b.discarded.empty());
  }
  SUBCASE("identical samples give identical results") {
    const LoadDataset ds = sample_loads(net, 10, 1, 1.0, 1.0);
    const BatchResult b = batch_solve(m, ds, cfg, 3);
    REQUIRE(b.results.size() == 10);
    for (const auto& r : b.results) {
      CHECK(r.state.x == b.results[0].state.x);
      CHECK(r.cost == b.results[0].cost);
    }
    CHECK(b.convergence_fraction() == 1.0);
  }
  SUBCASE("non-converged samples are discarded and results persist") {
    LoadDataset ds = sample_loads(net, 3, 2);
    ds.samples[1](1, 0) = 3.0;
    const BatchResult b = batch_solve(m, ds, cfg);
    CHECK(b.discarded == std::vector<std::size_t>{1});
    CHECK(b.convergence_fraction() >= 0.0);
    CHECK(b.convergence_fraction() <= 1.0);
    testing::TempDir tmp("batch");
    write_batch(b, m, tmp.path);
    const auto entries = read_baseline_entries(tmp.path);
    REQUIRE(entries.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(entries[i].sample_index == i);
      CHECK(entries[i].converged == b.results[i].converged);
      CHECK(entries[i].cost == b.results[i].cost);
    }
  }
}

TEST_CASE("solver configuration") {
  CHECK(parse_solve_method("newton") == SolveMethod::newton);
  CHECK(parse_solve_method("adam") == SolveMethod::adam);
  CHECK_THROWS_AS(parse_solve_method("ipopt"), ValidationError);
  SolveConfig cfg;
  cfg.residual_tolerance = 0.0;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
  cfg = SolveConfig{};
  cfg.max_iters = 0;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
}

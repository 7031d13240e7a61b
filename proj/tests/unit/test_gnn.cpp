#include <doctest.h>

#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include "gnnopf/error.hpp"
#include "gnnopf/gnn.hpp"
#include "gnnopf/metrics.hpp"
#include "support.hpp"

using namespace gnnopf;

namespace {

GnnParams scaled_params(const GnnConfig& cfg, double scale) {
  GnnParams p = init_params(cfg);
  std::vector<double> flat = p.flatten();
  for (double& v : flat) v *= scale;
  p.assign(flat);
  return p;
}

Matrix random_demand(std::mt19937_64& rng, const NetworkCase& net) {
  Matrix d = reference_demand(net);
  for (double& v : d.data) v *= testing::uniform(rng, 0.5, 1.5);
  return d;
}

std::vector<std::size_t> hop_distance(const Matrix& a, std::size_t src) {
  std::vector<std::size_t> dist(a.rows, SIZE_MAX);
  std::deque<std::size_t> q{src};
  dist[src] = 0;
  while (!q.empty()) {
    const std::size_t i = q.front();
    q.pop_front();
    for (std::size_t j = 0; j < a.cols; ++j) {
      if (a(i, j) != 0.0 && dist[j] == SIZE_MAX) {
        dist[j] = dist[i] + 1;
        q.push_back(j);
      }
    }
  }
  return dist;
}

} // namespace

TEST_CASE("input features") {
  const GridModel& m = testing::case30_model();
  const Matrix zero(30, 2);
  const Matrix u = build_input(m, zero);
  REQUIRE(u.cols == kInputFeatures);
  for (std::size_t i = 0; i < m.n_buses; ++i) {
    CHECK(u(i, 0) == 0.0);
    CHECK(u(i, 1) == 0.0);
    CHECK(u(i, 6) == m.v_min[i]);
    CHECK(u(i, 7) == m.v_max[i]);
    if (!m.has_generator(i)) {
      for (std::size_t c = 2; c < 6; ++c) CHECK(u(i, c) == 0.0);
    }
  }
  // bus 1 carries generator 1: Pmax 80 MW, Qmin -20 MVAr
  CHECK(u(0, 4) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(u(0, 3) == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK_THROWS_AS(build_input(m, Matrix(29, 2)), ShapeError);
}

TEST_CASE("graph filter") {
  Matrix a(2, 2);
  a(0, 1) = a(1, 0) = 1.0;
  const SparseMatrix s = SparseMatrix::from_dense(a);
  const Matrix z(2, 1, {1.0, 0.0});
  const std::vector<Matrix> taps{Matrix(1, 1, {1.0}), Matrix(1, 1, {1.0})};
  CHECK(graph_filter(s, z, taps) == Matrix(2, 1, {1.0, 1.0}));

  std::mt19937_64 rng(3);
  Matrix z2(2, 3), h0(3, 2), h1(3, 2), h2(3, 2);
  for (Matrix* m : {&z2, &h0, &h1, &h2})
    for (double& v : m->data) v = testing::uniform(rng, -1, 1);
  const std::vector<Matrix> one{h0};
  const Matrix only = graph_filter(s, z2, one);
  const std::vector<Matrix> three{h0, h1, h2};
  const SparseMatrix empty = SparseMatrix::from_dense(Matrix(2, 2));
  CHECK(graph_filter(empty, z2, three) == only);
  CHECK_THROWS_AS(graph_filter(s, z2, std::vector<Matrix>{}), ShapeError);
  CHECK_THROWS_AS(graph_filter(s, z2, std::vector<Matrix>{Matrix(2, 2)}), ShapeError);
}

TEST_CASE("bounded sigmoid head") {
  CHECK(bounded_sigmoid(0.0, -1.0, 3.0) == 1.0);
  CHECK(bounded_sigmoid(0.0, 0.94, 1.06) == doctest::Approx(1.0).epsilon(1e-15));
  for (double x : {-800.0, -3.0, 0.0, 2.5, 800.0}) CHECK(bounded_sigmoid(x, 0.7, 0.7) == 0.7);
  CHECK(bounded_sigmoid(800.0, 0.94, 1.06) <= 1.06);
  CHECK(bounded_sigmoid(-800.0, 0.94, 1.06) >= 0.94);
}

TEST_CASE("parameter initialization") {
  GnnConfig cfg{.layers = 3, .taps = 4, .features = 16, .seed = 12};
  CHECK(init_params(cfg) == init_params(cfg));
  GnnConfig other = cfg;
  other.seed = 13;
  CHECK_FALSE(init_params(cfg) == init_params(other));
  const GnnParams p = init_params(cfg);
  CHECK(layer_widths(cfg) == std::vector<std::size_t>{8, 16, 16, 4});
  REQUIRE(p.layers.size() == 3);
  for (const GnnLayer& l : p.layers) {
    const double c = init_bound(cfg.taps, l.in, l.out);
    CHECK(c == doctest::Approx(std::sqrt(6.0 / (5.0 * static_cast<double>(l.in + l.out)))));
    CHECK(l.taps.size() == 5);
    for (const Matrix& h : l.taps)
      for (double v : h.data) CHECK(std::abs(v) <= c);
  }
  CHECK(init_bound(4, 8, 16) != init_bound(4, 16, 16));
  CHECK(p.count() == 5 * (8 * 16 + 16 * 16 + 16 * 4));
  GnnParams q = p;
  q.assign(p.flatten());
  CHECK(q == p);
  CHECK_THROWS_AS(q.assign(std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(init_params(GnnConfig{.layers = 0}), ValidationError);
}

TEST_CASE("zero taps give box midpoints") {
  const GridModel& m = testing::case30_model();
  GnnParams p = init_params({});
  p.assign(std::vector<double>(p.count(), 0.0));
  const Matrix demand = reference_demand(testing::case30());
  const BusState x = gnn_forward(p, m, demand);
  const GenerationMatrix g = generation_from_state(x, demand);
  for (std::size_t i = 0; i < m.n_buses; ++i) {
    CHECK(x.v(i) == doctest::Approx(0.5 * (m.v_min[i] + m.v_max[i])).epsilon(1e-15));
    CHECK(x.delta(i) == 0.0);
    CHECK(g(i, 0) == doctest::Approx(0.5 * (m.gen_lower(i, 0) + m.gen_upper(i, 0))).epsilon(1e-12));
    CHECK(g(i, 1) == doctest::Approx(0.5 * (m.gen_lower(i, 1) + m.gen_upper(i, 1))).epsilon(1e-12));
  }
}

TEST_CASE("generator and voltage boxes hold for any parameters") {
  const GridModel& m = testing::case30_model();
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    GnnConfig cfg{.layers = 2, .taps = 3, .features = 8, .seed = static_cast<std::uint64_t>(trial)};
    const GnnParams p = scaled_params(cfg, std::pow(10.0, testing::uniform(rng, -2, 3)));
    const Matrix demand = random_demand(rng, testing::case30());
    const BusState x = gnn_forward(p, m, demand);
    const FeasibilityReport r = feasibility_report(m, x, demand);
    CHECK(r.per_kind[static_cast<std::size_t>(ConstraintKind::gen_p)].violations == 0);
    CHECK(r.per_kind[static_cast<std::size_t>(ConstraintKind::gen_q)].violations == 0);
    CHECK(r.per_kind[static_cast<std::size_t>(ConstraintKind::voltage_mag)].violations == 0);
    CHECK(x.delta(m.reference_bus) == 0.0);
  }
}

TEST_CASE("relabeling buses permutes the output") {
  const NetworkCase& net = testing::case30();
  std::vector<std::size_t> perm(net.buses.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    NetworkCase shuffled = net;
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled.buses[i] = net.buses[perm[i]];
    const GridModel a = build_grid_model(net);
    const GridModel b = build_grid_model(shuffled);
    const GnnParams p = init_params({.seed = static_cast<std::uint64_t>(trial)});
    const Matrix demand = random_demand(rng, net);
    Matrix demand_b(demand.rows, 2);
    for (std::size_t i = 0; i < perm.size(); ++i) demand_b.row(i)[0] = demand(perm[i], 0), demand_b.row(i)[1] = demand(perm[i], 1);
    const BusState xa = gnn_forward(p, a, demand);
    const BusState xb = gnn_forward(p, b, demand_b);
    double worst = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t c = 0; c < 4; ++c) worst = std::max(worst, std::abs(xb.x(i, c) - xa.x(perm[i], c)));
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("outputs depend only on the L*K-hop neighborhood") {
  const GridModel& base = testing::case30_model();
  const GnnConfig cfg{.layers = 2, .taps = 1, .features = 8, .seed = 3};
  const GnnParams p = init_params(cfg);
  const std::size_t bus = base.reference_bus;
  const auto dist = hop_distance(base.gso, bus);
  const std::size_t reach = cfg.layers * cfg.taps;
  std::size_t outside = 0;
  GridModel cut = base;
  Matrix demand = reference_demand(testing::case30());
  for (std::size_t j = 0; j < base.n_buses; ++j) {
    if (dist[j] <= reach) continue;
    ++outside;
    demand(j, 0) = demand(j, 1) = 0.0;
    cut.gen_lower(j, 0) = cut.gen_lower(j, 1) = cut.gen_upper(j, 0) = cut.gen_upper(j, 1) = 0.0;
    cut.v_min[j] = cut.v_max[j] = 0.0;
  }
  REQUIRE(outside > 0);
  const Matrix full = reference_demand(testing::case30());
  const BusState a = gnn_forward(p, base, full);
  const BusState b = gnn_forward(p, cut, demand);
  for (std::size_t c = 0; c < 4; ++c) CHECK(a.x(bus, c) == b.x(bus, c));
}

TEST_CASE("loss gradient through the network matches finite differences") {
  const GridModel& m = testing::two_bus_model();
  const LossContext ctx = make_loss_context(m);
  const Matrix demand = reference_demand(testing::two_bus());
  const GnnConfig cfg{.layers = 2, .taps = 2, .features = 4, .hidden = Nonlinearity::tanh, .seed = 5};
  GnnParams p = init_params(cfg);
  const ad::ValueAndGrad f = [&](std::span<const double> flat, std::vector<double>* grad) {
    GnnParams q = p;
    q.assign(flat);
    ad::Tape t;
    return loss_and_gradient(t, q, m, ctx, demand, {}, grad);
  };
  const auto r = ad::finite_difference_check(f, p.flatten(), 1e-6);
  CHECK(r.max_discrepancy <= 1e-5);
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir tmp("ckpt");
  const GridModel& m = testing::case30_model();
  const Checkpoint c{init_params({.layers = 2, .taps = 3, .features = 5, .hidden = Nonlinearity::tanh, .seed = 8}),
                     fingerprint(m)};
  save_checkpoint(c, tmp.path / "c.json");
  const Checkpoint back = load_checkpoint(tmp.path / "c.json");
  CHECK(back.params == c.params);
  CHECK(back.gso == c.gso);
  const Matrix demand = reference_demand(testing::case30());
  CHECK(gnn_forward(back.params, m, demand).x == gnn_forward(c.params, m, demand).x);
  CHECK_THROWS(load_checkpoint(tmp.path / "missing.json"));
  std::ofstream(tmp.path / "bad.json") << "{\"format_version\": 1}";
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "bad.json"), ValidationError);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gnnopf/error.hpp"
#include "gnnopf/dataset.hpp"
#include "gnnopf/grid_model.hpp"
#include "support.hpp"

using namespace gnnopf;

namespace {

NetworkCase permuted(const NetworkCase& c, const std::vector<std::size_t>& perm) {
  NetworkCase out = c;
  for (std::size_t i = 0; i < perm.size(); ++i) out.buses[i] = c.buses[perm[i]];
  return out;
}

BusState read_state_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<double> vals;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double id;
    ls >> id;
    for (double v; ls >> v;) vals.push_back(v);
    ++rows;
  }
  return BusState(Matrix(rows, 4, vals));
}

// Single line, no charging, r = 0.01, x = 0.1.
const char* kSingleLine = R"(function mpc = single_line
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	135	1	1.1	0.9;
	2	1	0	0	0	0	1	1	0	135	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0;
];
mpc.branch = [
	1	2	0.01	0.1	0	0	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0	1	0;
];
)";

} // namespace

TEST_CASE("graph shift operator") {
  const NetworkCase& c = testing::case30();

  SUBCASE("alpha = 0 weights every edge by one") {
    const GridModel m = build_grid_model(c, {.alpha = 0.0, .beta = 0.01, .normalize = false});
    CHECK(m.gso_stats.edges_kept == 41);
    CHECK(m.gso_stats.edges_dropped == 0);
    for (const Branch& b : m.branches) CHECK(m.gso(b.from, b.to) == 1.0);
  }
  SUBCASE("threshold drops weak edges") {
    // pick alpha so one branch sits at exp(-alpha/|y|^2) = 0.3
    const GridModel ref = build_grid_model(c);
    const double y2 = std::norm(ref.branches[0].y_series);
    const double alpha = -std::log(0.3) * y2;
    const GridModel m = build_grid_model(c, {.alpha = alpha, .beta = 0.5, .normalize = false});
    CHECK(m.gso(ref.branches[0].from, ref.branches[0].to) == 0.0);
    CHECK(m.gso_stats.edges_dropped >= 1);
    CHECK(m.gso_stats.edges_kept + m.gso_stats.edges_dropped == 41);
  }
  SUBCASE("symmetric with zero diagonal") {
    for (const NetworkCase* net : {&testing::case30(), &testing::two_bus()}) {
      const GridModel m = build_grid_model(*net);
      for (std::size_t i = 0; i < m.n_buses; ++i) {
        CHECK(m.gso(i, i) == 0.0);
        for (std::size_t j = 0; j < m.n_buses; ++j) CHECK(m.gso(i, j) == m.gso(j, i));
      }
      CHECK(m.gso_sparse.to_dense() == m.gso);
    }
  }
  SUBCASE("default alpha puts the median edge at one half") {
    const GridModel m = build_grid_model(c, {.normalize = false});
    std::vector<double> w;
    for (std::size_t i = 0; i < m.n_buses; ++i)
      for (std::size_t j = i + 1; j < m.n_buses; ++j)
        if (m.gso(i, j) != 0.0) w.push_back(m.gso(i, j));
    std::sort(w.begin(), w.end());
    REQUIRE(w.size() % 2 == 1);
    CHECK(w[w.size() / 2] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("normalized spectral radius is one") {
    const GridModel m = build_grid_model(c);
    CHECK(std::abs(spectral_radius(m.gso) - 1.0) <= 1e-6);
    const GridModel raw = build_grid_model(c, {.normalize = false});
    CHECK(std::abs(spectral_radius(raw.gso) - m.gso_stats.spectral_radius_raw) <= 1e-9);
  }
  SUBCASE("relabeling buses permutes the operator") {
    std::vector<std::size_t> perm(c.buses.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(4);
    std::shuffle(perm.begin(), perm.end(), rng);
    const GridModel a = build_grid_model(c, {.normalize = false});
    const GridModel b = build_grid_model(permuted(c, perm), {.normalize = false});
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t j = 0; j < perm.size(); ++j) CHECK(b.gso(i, j) == a.gso(perm[i], perm[j]));
  }
  SUBCASE("bad options") {
    CHECK_THROWS_AS(build_grid_model(c, {.alpha = -1.0}), ValidationError);
    CHECK_THROWS_AS(build_grid_model(c, {.beta = 1.0}), ValidationError);
    CHECK_THROWS_AS(build_grid_model(c, {.alpha = 1e9, .beta = 0.5}), ModelError);
  }
}

TEST_CASE("branch flows match high-precision goldens") {
  SUBCASE("single line") {
    const GridModel m = build_grid_model(parse_matpower(kSingleLine));
    const std::vector<double> v{1.0, 0.98}, d{0.0, -0.05};
    const BranchFlows f = branch_flows(m, v, d);
    CHECK(f.fwd[0].real() == doctest::Approx(0.50596099372829772).epsilon(1e-13));
    CHECK(f.fwd[0].imag() == doctest::Approx(0.16165134875650101).epsilon(1e-13));
    CHECK(f.rev[0].real() == doctest::Approx(-0.5031397168710045).epsilon(1e-13));
    CHECK(f.rev[0].imag() == doctest::Approx(-0.13343858018356877).epsilon(1e-13));
  }
  SUBCASE("transformer with phase shift, shunt and charging") {
    const GridModel m = build_grid_model(load_matpower(testing::fixture_dir() / "three_bus_tx.m"));
    const std::vector<double> v{1.02, 0.985, 0.97}, d{0.0, -0.04, -0.11};
    const BranchFlows f = branch_flows(m, v, d);
    const double golden[3][4] = {
        {0.58003761490282595, 0.2904782567457368, -0.57170730409273499, -0.29736951350537296},
        {0.17165712558581674, 0.57169082494471437, -0.16999999629775704, -0.53191972203128169},
        {1.1532899252549908, 0.21340738923994412, -1.1134926591175001, -0.1005628354483086},
    };
    for (std::size_t k = 0; k < 3; ++k) {
      CAPTURE(k);
      CHECK(f.fwd[k].real() == doctest::Approx(golden[k][0]).epsilon(1e-13));
      CHECK(f.fwd[k].imag() == doctest::Approx(golden[k][1]).epsilon(1e-13));
      CHECK(f.rev[k].real() == doctest::Approx(golden[k][2]).epsilon(1e-13));
      CHECK(f.rev[k].imag() == doctest::Approx(golden[k][3]).epsilon(1e-13));
    }
    BusState x(3);
    const double p[3] = {0.75, -0.1, -0.6}, q[3] = {0.2, 0.05, -0.25};
    for (std::size_t i = 0; i < 3; ++i) {
      x.x(i, col::p) = p[i];
      x.x(i, col::q) = q[i];
      x.x(i, col::v) = v[i];
      x.x(i, col::delta) = d[i];
    }
    const auto r = power_balance_residual(m, x);
    const double res[3][2] = {{-0.98332754015781675, -0.30388564598568093},
                              {0.30005017850691825, -0.22432131143934141},
                              {0.66937915541525718, 0.56125355747959029}};
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(r[i].real() == doctest::Approx(res[i][0]).epsilon(1e-13));
      CHECK(r[i].imag() == doctest::Approx(res[i][1]).epsilon(1e-13));
    }
  }
  SUBCASE("equal terminal voltages carry nothing") {
    const GridModel m = build_grid_model(parse_matpower(kSingleLine));
    const std::vector<double> v{1.0, 1.0}, d{0.3, 0.3};
    const BranchFlows f = branch_flows(m, v, d);
    CHECK(std::abs(f.fwd[0]) == doctest::Approx(0.0));
    CHECK(std::abs(f.rev[0]) == doctest::Approx(0.0));
  }
}

TEST_CASE("line losses are passive and equal Re(y*)|Vi - Vj|^2") {
  const GridModel m = build_grid_model(parse_matpower(kSingleLine));
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const std::vector<double> v{testing::uniform(rng, 0.5, 1.5), testing::uniform(rng, 0.5, 1.5)};
    const std::vector<double> d{testing::uniform(rng, -3, 3), testing::uniform(rng, -3, 3)};
    const BranchFlows f = branch_flows(m, v, d);
    const double loss = (f.fwd[0] + f.rev[0]).real();
    const Complex dv = std::polar(v[0], d[0]) - std::polar(v[1], d[1]);
    CHECK(loss >= -1e-12);
    CHECK(loss == doctest::Approx(std::conj(m.branches[0].y_series).real() * std::norm(dv)).epsilon(1e-10));
  }
}

TEST_CASE("power balance residual") {
  SUBCASE("two-bus hand evaluation") {
    const GridModel& m = testing::two_bus_model();
    BusState x(2);
    x.x = Matrix(2, 4, {0.6, 0.1, 1.03, 0.0, -0.5, -0.2, 1.0, -0.05});
    const auto r = power_balance_residual(m, x);
    CHECK(r[0].real() == doctest::Approx(0.058442895761216285).epsilon(1e-12));
    CHECK(r[0].imag() == doctest::Approx(-0.15710760750796929).epsilon(1e-12));
    CHECK(r[1].real() == doctest::Approx(0.038117041281982199).epsilon(1e-12));
    CHECK(r[1].imag() == doctest::Approx(0.04331597793995412).epsilon(1e-12));
  }
  SUBCASE("flat profile without shunts or charging") {
    NetworkCase c = testing::case30();
    for (auto& b : c.buses) b.shunt_admittance = {};
    for (auto& br : c.branches) br.total_charging = 0.0;
    const GridModel m = build_grid_model(c);
    BusState x(m.n_buses);
    for (std::size_t i = 0; i < m.n_buses; ++i) x.x(i, col::v) = 1.0;
    for (const Complex& r : power_balance_residual(m, x)) CHECK(std::abs(r) == 0.0);
  }
  SUBCASE("injection enters its own residual only") {
    const GridModel& m = testing::case30_model();
    std::mt19937_64 rng(2);
    BusState x(m.n_buses);
    for (std::size_t i = 0; i < m.n_buses; ++i) {
      x.x(i, col::p) = testing::uniform(rng, -1, 1);
      x.x(i, col::q) = testing::uniform(rng, -1, 1);
      x.x(i, col::v) = testing::uniform(rng, 0.9, 1.1);
      x.x(i, col::delta) = testing::uniform(rng, -0.3, 0.3);
    }
    const auto r0 = power_balance_residual(m, x);
    BusState y = x;
    y.x(7, col::p) += 0.25;
    const auto r1 = power_balance_residual(m, y);
    for (std::size_t i = 0; i < m.n_buses; ++i) {
      if (i == 7) {
        CHECK(r1[i].real() - r0[i].real() == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(r1[i].imag() == r0[i].imag());
      } else {
        CHECK(r1[i] == r0[i]);
      }
    }
  }
  SUBCASE("independent OPF optimum satisfies the balance and reproduces its cost") {
    const GridModel& m = testing::case30_model();
    const BusState x = read_state_csv(testing::fixture_dir() / "case30_opf_state.csv");
    REQUIRE(x.n_buses() == 30);
    double worst = 0.0;
    for (const Complex& r : power_balance_residual(m, x)) worst = std::max(worst, std::abs(r));
    CHECK(worst <= 1e-8);
    const Matrix demand = reference_demand(testing::case30());
    // interior-point optimum from an independent solver
    CHECK(generation_cost(m, generation_from_state(x, demand)) == doctest::Approx(576.8923368462).epsilon(1e-9));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(power_balance_residual(testing::case30_model(), BusState(3)), ShapeError);
  }
}

TEST_CASE("demand aggregation and generation") {
  const std::vector<LoadEntry> loads{{3, {0.1, 0.02}}, {3, {0.05, 0.01}}};
  const DemandMatrix d = aggregate_demand(6, loads);
  CHECK(d(3, 0) == doctest::Approx(0.15));
  CHECK(d(3, 1) == doctest::Approx(0.03));
  CHECK(d(5, 0) == 0.0);
  CHECK(d(5, 1) == 0.0);
  const std::vector<LoadEntry> bad{{6, {0.1, 0.0}}};
  CHECK_THROWS_AS(aggregate_demand(6, bad), ValidationError);

  BusState x(2);
  x.x = Matrix(2, 4, {0.3, -0.1, 1.0, 0.0, -0.2, 0.4, 1.0, 0.0});
  const Matrix demand(2, 2, {0.0, 0.0, 0.5, 0.1});
  const GenerationMatrix g = generation_from_state(x, demand);
  CHECK(g(1, 0) == doctest::Approx(0.3));
  CHECK(g(1, 1) == doctest::Approx(0.5));
  const BusState back = make_state(g, demand, x.v_column(), x.delta_column());
  CHECK(back.x == x.x);
  CHECK(injections_from_generation(Matrix(2, 2), Matrix(2, 2)) == Matrix(2, 2));
}

TEST_CASE("generation cost") {
  const GridModel& m = testing::two_bus_model();
  GenerationMatrix g(2, 2);
  CHECK(generation_cost(m, g) == 5.0);
  g(0, 0) = 0.5; // 50 MW: 0.01*2500 + 10*50 + 5
  CHECK(generation_cost(m, g) == doctest::Approx(530.0).epsilon(1e-14));
  const GridModel& m30 = testing::case30_model();
  double c0 = 0.0;
  for (const Generator& gen : m30.generators) c0 += gen.cost.coefficients.back();
  CHECK(generation_cost(m30, GenerationMatrix(30, 2)) == c0);
}

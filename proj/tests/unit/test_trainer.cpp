#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "gnnopf/error.hpp"
#include "gnnopf/trainer.hpp"
#include "support.hpp"

using namespace gnnopf;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.gnn = {.layers = 2, .taps = 2, .features = 6, .seed = 4};
  cfg.optimizer.learning_rate = 1e-3;
  cfg.seed = 21;
  cfg.validation_fraction = 0.1;
  return cfg;
}

} // namespace

TEST_CASE("shuffled indices") {
  const auto a = shuffled_indices(50, 3);
  CHECK(a == shuffled_indices(50, 3));
  CHECK_FALSE(a == shuffled_indices(50, 4));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(50);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
  CHECK(shuffled_indices(0, 1).empty());
}

TEST_CASE("training is deterministic for a fixed worker count") {
  const GridModel& m = testing::two_bus_model();
  const LoadDataset ds = sample_loads(testing::two_bus(), 40, 5);
  for (std::size_t workers : {1u, 3u}) {
    TrainConfig cfg = small_config();
    cfg.workers = workers;
    const TrainResult a = train(cfg, ds, m);
    const TrainResult b = train(cfg, ds, m);
    CHECK(a.params == b.params);
    REQUIRE(a.history.epochs.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(a.history.epochs[e].train_loss == b.history.epochs[e].train_loss);
      CHECK(a.history.epochs[e].val_loss == b.history.epochs[e].val_loss);
      CHECK(a.history.epochs[e].val_violation_rate == b.history.epochs[e].val_violation_rate);
    }
    CHECK(a.history.n_validation == 4);
    CHECK(a.history.n_train == 36);
  }
}

TEST_CASE("training reduces the loss on the two-bus fixture") {
  const GridModel& m = testing::two_bus_model();
  const LoadDataset ds = sample_loads(testing::two_bus(), 100, 6);
  TrainConfig cfg = small_config();
  cfg.epochs = 50;
  cfg.batch_size = 16;
  cfg.validation_fraction = 0.05;
  const double before = mean_loss(init_params(cfg.gnn), m, ds, cfg.penalty);
  const TrainResult r = train(cfg, ds, m);
  CHECK(r.history.epochs.back().train_loss < r.history.epochs.front().train_loss);
  CHECK(mean_loss(r.params, m, ds, cfg.penalty) < before);
  CHECK(r.history.best_epoch >= 1);
  CHECK(r.history.best_epoch <= 50);
  const auto& best = r.history.epochs[r.history.best_epoch - 1];
  for (const auto& e : r.history.epochs) CHECK(best.val_loss <= e.val_loss);
}

TEST_CASE("one small gradient step decreases the loss") {
  const GridModel& m = testing::two_bus_model();
  const LossContext ctx = make_loss_context(m);
  const LoadDataset ds = sample_loads(testing::two_bus(), 1, 8);
  GnnParams p = init_params({.layers = 2, .taps = 2, .features = 6, .seed = 99});
  ad::Tape t;
  std::vector<double> g;
  const double l0 = loss_and_gradient(t, p, m, ctx, ds.samples[0], {}, &g);
  std::vector<double> flat = p.flatten();
  OptimizerState st = make_optimizer_state(flat.size());
  double gmax = 0.0;
  for (double v : g) gmax = std::max(gmax, std::abs(v));
  REQUIRE(gmax > 0.0);
  // largest coordinate moves by 1e-6
  optimizer_step(flat, g, st, {.kind = OptimizerKind::sgd, .learning_rate = 1e-6 / gmax});
  p.assign(flat);
  CHECK(loss_and_gradient(t, p, m, ctx, ds.samples[0], {}, nullptr) < l0);
}

TEST_CASE("without penalties the network drifts toward cheaper dispatch") {
  const GridModel& m = testing::two_bus_model();
  const LoadDataset ds = sample_loads(testing::two_bus(), 32, 10);
  TrainConfig cfg = small_config();
  cfg.penalty.lambda = 0.0;
  cfg.penalty.mu = 0.0;
  cfg.epochs = 20;
  auto mean_pg = [&](const GnnParams& p) {
    double s = 0.0;
    for (const auto& d : ds.samples) s += generation_from_state(gnn_forward(p, m, d), d)(0, 0);
    return s / static_cast<double>(ds.size());
  };
  const TrainResult r = train(cfg, ds, m);
  CHECK(mean_pg(r.params) < mean_pg(init_params(cfg.gnn)));
}

TEST_CASE("dataset guards") {
  const GridModel& m = testing::two_bus_model();
  const LoadDataset other = sample_loads(testing::case30(), 3, 1);
  try {
    require_dataset_matches(other, m);
    FAIL("expected a dataset error");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()) == "dataset was sampled from a different case");
  }
  LoadDataset empty = sample_loads(testing::two_bus(), 1, 1);
  empty.samples.clear();
  CHECK_THROWS_AS(train(small_config(), empty, m), DatasetError);
  CHECK_THROWS_AS(evaluate_test_set(init_params({}), m, empty), DatasetError);
  TrainConfig bad = small_config();
  bad.batch_size = 0;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = small_config();
  bad.validation_fraction = 1.0;
  CHECK_THROWS_AS(validate(bad), ValidationError);
}

TEST_CASE("test-set evaluation") {
  const GridModel& m = testing::case30_model();
  const LoadDataset test = sample_loads(testing::case30(), 6, 77);
  const GnnParams p = init_params({.layers = 2, .taps = 2, .features = 8, .seed = 1});

  SUBCASE("checkpoint round trip gives identical reports") {
    testing::TempDir tmp("eval");
    save_checkpoint({p, fingerprint(m)}, tmp.path / "c.json");
    const GnnParams back = load_checkpoint(tmp.path / "c.json").params;
    CHECK(to_json(evaluate_test_set(back, m, test)) == to_json(evaluate_test_set(p, m, test)));
  }
  SUBCASE("worker count does not change the report") {
    CHECK(to_json(evaluate_test_set(p, m, test, nullptr, 1)) == to_json(evaluate_test_set(p, m, test, nullptr, 4)));
  }
  SUBCASE("baseline comparison") {
    std::vector<BaselineEntry> base;
    for (std::size_t i = 0; i < test.size(); ++i) base.push_back({i, i % 2 == 0, 600.0});
    const TestReport r = evaluate_test_set(p, m, test, &base);
    CHECK(r.baseline_converged == 3);
    REQUIRE(r.baseline_cost_on_converged);
    CHECK(*r.baseline_cost_on_converged == 600.0);
    const double expect = (r.samples[0].cost + r.samples[2].cost + r.samples[4].cost) / 3.0;
    CHECK(*r.gnn_cost_on_converged == doctest::Approx(expect).epsilon(1e-14));
    CHECK(*r.cost_ratio_converged() == doctest::Approx(expect / 600.0).epsilon(1e-14));
    CHECK(r.mean_violation_rate >= 0.0);
    CHECK(r.fraction_with_violation <= 1.0);
    base.pop_back();
    CHECK_THROWS_AS(evaluate_test_set(p, m, test, &base), ValidationError);
    base.push_back({9, true, 1.0});
    CHECK_THROWS_AS(evaluate_test_set(p, m, test, &base), ValidationError);
  }
  SUBCASE("history and error files") {
    testing::TempDir tmp("hist");
    TrainHistory h;
    h.epochs.push_back({1, 2.0, 3.0, 0.5, 0.1});
    write_history_csv(h, tmp.path / "h.csv");
    std::ifstream in(tmp.path / "h.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,train_loss,val_loss,val_violation_rate,seconds");
    const TestReport r = evaluate_test_set(p, m, test);
    write_relative_errors_csv(r, tmp.path / "e.csv");
    std::ifstream e(tmp.path / "e.csv");
    std::size_t lines = 0;
    for (std::string l; std::getline(e, l);) ++lines;
    CHECK(lines == 1 + test.size() * r.samples[0].report.margins.size());
  }
}

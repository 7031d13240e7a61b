#include "gnnopf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gnnopf/error.hpp"
#include "gnnopf/parallel.hpp"

namespace gnnopf {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Evaluated {
  double loss = 0.0;
  BusState state;
};

Evaluated evaluate_sample(ad::Tape& tape, const GnnParams& params, const GridModel& model, const LossContext& ctx,
                          const DemandMatrix& demand, const PenaltyConfig& penalty) {
  tape.reset();
  const StateVars s = record_forward(tape, params, model, ctx, demand);
  const LossTerms terms = record_loss(tape, ctx, s, penalty);
  return {tape.scalar(terms.total), state_from_vars(tape, s, ctx, demand)};
}

} // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ValidationError("epochs must be at least 1");
  if (cfg.batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (!(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0))
    throw ValidationError("validation fraction must lie in [0, 1)");
  if (cfg.workers < 1) throw ValidationError("workers must be at least 1");
  validate(cfg.optimizer);
  validate(cfg.penalty);
  validate(cfg.gnn);
}

void require_dataset_matches(const LoadDataset& ds, const GridModel& model) {
  if (ds.case_digest != model.case_digest) throw DatasetError("dataset was sampled from a different case");
  if (ds.bus_ids != model.bus_ids) throw DatasetError("dataset bus order does not match the case");
  for (const auto& s : ds.samples) {
    if (s.rows != model.n_buses || s.cols != 2) throw DatasetError("dataset sample shape " + shape_str(s) + " does not match the case");
  }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::uint64_t state = seed;
  for (std::size_t i = n; i > 1; --i) {
    state = splitmix64(state);
    const std::size_t j = static_cast<std::size_t>(state % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

double mean_loss(const GnnParams& params, const GridModel& model, const LoadDataset& ds, const PenaltyConfig& penalty,
                 std::size_t workers) {
  if (ds.size() == 0) throw DatasetError("mean loss over an empty dataset");
  const LossContext ctx = make_loss_context(model);
  std::vector<ad::Tape> tapes(std::max<std::size_t>(1, workers));
  std::vector<double> losses(ds.size());
  parallel_for(ds.size(), workers, [&](std::size_t w, std::size_t i) {
    losses[i] = loss_and_gradient(tapes[w], params, model, ctx, ds.samples[i], penalty, nullptr);
  });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(ds.size());
}

TrainResult train(const TrainConfig& cfg, const LoadDataset& dataset, const GridModel& model, const EpochCallback& on_epoch) {
  validate(cfg);
  require_dataset_matches(dataset, model);
  if (dataset.size() == 0) throw DatasetError("cannot train on an empty dataset");

  // Validation split; with no held-out samples the training set doubles as
  // the validation set.
  const auto order = shuffled_indices(dataset.size(), splitmix64(cfg.seed));
  std::size_t n_val = 0;
  if (cfg.validation_fraction > 0.0 && dataset.size() >= 2) {
    n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(dataset.size()))));
    n_val = std::min(n_val, dataset.size() - 1);
  }
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  if (val_idx.empty()) val_idx = train_idx;

  const LossContext ctx = make_loss_context(model);
  GnnParams params = init_params(cfg.gnn);
  std::vector<double> flat = params.flatten();
  OptimizerState opt = make_optimizer_state(flat.size());

  const std::size_t workers = cfg.workers;
  std::vector<ad::Tape> tapes(workers);
  const std::size_t batch = std::min(cfg.batch_size, train_idx.size());
  std::vector<std::vector<double>> grads(batch, std::vector<double>(flat.size()));
  std::vector<double> losses(batch);
  std::vector<double> mean_grad(flat.size());

  TrainResult result;
  result.history.n_train = train_idx.size();
  result.history.n_validation = n_val;
  result.params = params;
  bool have_best = false;

  std::uint64_t epoch_seed = splitmix64(cfg.seed ^ 0x5eed5eed5eed5eedULL);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    epoch_seed = splitmix64(epoch_seed);
    const auto perm = shuffled_indices(train_idx.size(), epoch_seed);
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < perm.size(); start += batch, ++batch_no) {
      const std::size_t count = std::min(batch, perm.size() - start);
      parallel_for(count, workers, [&](std::size_t w, std::size_t j) {
        const std::size_t sample = train_idx[perm[start + j]];
        losses[j] = loss_and_gradient(tapes[w], params, model, ctx, dataset.samples[sample], cfg.penalty, &grads[j]);
      });
      std::fill(mean_grad.begin(), mean_grad.end(), 0.0);
      for (std::size_t j = 0; j < count; ++j) {
        bool finite = std::isfinite(losses[j]);
        for (double g : grads[j]) finite = finite && std::isfinite(g);
        if (!finite) {
          std::ostringstream msg;
          msg << "non-finite loss or gradient at epoch " << epoch << ", batch " << batch_no + 1 << " (sample "
              << train_idx[perm[start + j]] << ")";
          throw TrainingError(msg.str());
        }
        loss_sum += losses[j];
        for (std::size_t p = 0; p < flat.size(); ++p) mean_grad[p] += grads[j][p];
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (double& g : mean_grad) g *= inv;
      optimizer_step(flat, mean_grad, opt, cfg.optimizer);
      params.assign(flat);
    }

    // Validation pass.
    std::vector<double> val_loss(val_idx.size()), val_rate(val_idx.size());
    parallel_for(val_idx.size(), workers, [&](std::size_t w, std::size_t j) {
      const DemandMatrix& d = dataset.samples[val_idx[j]];
      const Evaluated e = evaluate_sample(tapes[w], params, model, ctx, d, cfg.penalty);
      val_loss[j] = e.loss;
      val_rate[j] = violation_rate(relative_errors(inequality_margins(model, e.state, d)));
    });
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(perm.size());
    for (std::size_t j = 0; j < val_idx.size(); ++j) {
      rec.val_loss += val_loss[j];
      rec.val_violation_rate += val_rate[j];
    }
    rec.val_loss /= static_cast<double>(val_idx.size());
    rec.val_violation_rate /= static_cast<double>(val_idx.size());
    if (!std::isfinite(rec.val_loss)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!have_best || rec.val_loss < result.history.best_val_loss) {
      have_best = true;
      result.history.best_val_loss = rec.val_loss;
      result.history.best_epoch = epoch;
      result.params = params;
    }
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

void write_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "epoch,train_loss,val_loss,val_violation_rate,seconds\n";
  for (const auto& e : h.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_violation_rate << ',' << e.seconds << '\n';
}

std::optional<double> TestReport::cost_ratio_converged() const {
  if (!gnn_cost_on_converged || !baseline_cost_on_converged || *baseline_cost_on_converged == 0.0) return std::nullopt;
  return *gnn_cost_on_converged / *baseline_cost_on_converged;
}

std::optional<double> TestReport::cost_ratio_feasible() const {
  if (!gnn_cost_on_feasible || !baseline_cost_on_feasible || *baseline_cost_on_feasible == 0.0) return std::nullopt;
  return *gnn_cost_on_feasible / *baseline_cost_on_feasible;
}

TestReport evaluate_test_set(const GnnParams& params, const GridModel& model, const LoadDataset& test,
                             const std::vector<BaselineEntry>* baseline, std::size_t workers) {
  if (test.size() == 0) throw DatasetError("test set is empty");
  require_dataset_matches(test, model);
  if (baseline) {
    if (baseline->size() != test.size())
      throw ValidationError("baseline has " + std::to_string(baseline->size()) + " samples but the test set has " +
                            std::to_string(test.size()));
    for (std::size_t i = 0; i < baseline->size(); ++i) {
      if ((*baseline)[i].sample_index != i) throw ValidationError("baseline samples are not aligned with the test set");
    }
  }
  workers = std::max<std::size_t>(1, workers);
  TestReport r;
  r.n_samples = test.size();
  r.samples.resize(test.size());
  parallel_for(test.size(), workers, [&](std::size_t, std::size_t i) {
    const DemandMatrix& d = test.samples[i];
    const BusState x = gnn_forward(params, model, d);
    SampleEvaluation e;
    e.report = feasibility_report(model, x, d);
    e.cost = e.report.generation_cost;
    e.violation_rate = e.report.violation_rate;
    e.violations = e.report.violation_count();
    e.max_residual = e.report.max_equality_residual;
    for (std::size_t k = 0; k < kConstraintKinds; ++k) e.max_relative[k] = e.report.per_kind[k].max_relative;
    r.samples[i] = std::move(e);
  });
  std::size_t with_violation = 0;
  for (const auto& e : r.samples) {
    r.mean_cost += e.cost;
    r.mean_violation_rate += e.violation_rate;
    r.mean_max_residual += e.max_residual;
    if (e.violations > 0) ++with_violation;
  }
  const double n = static_cast<double>(r.n_samples);
  r.mean_cost /= n;
  r.mean_violation_rate /= n;
  r.mean_max_residual /= n;
  r.fraction_with_violation = static_cast<double>(with_violation) / n;

  if (baseline) {
    double g_conv = 0.0, b_conv = 0.0, g_feas = 0.0, b_feas = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto& b = (*baseline)[i];
      if (!b.converged) continue;
      ++r.baseline_converged;
      g_conv += r.samples[i].cost;
      b_conv += b.cost;
      if (r.samples[i].violations == 0) {
        ++r.compared_feasible;
        g_feas += r.samples[i].cost;
        b_feas += b.cost;
      }
    }
    if (r.baseline_converged) {
      r.gnn_cost_on_converged = g_conv / static_cast<double>(r.baseline_converged);
      r.baseline_cost_on_converged = b_conv / static_cast<double>(r.baseline_converged);
    }
    if (r.compared_feasible) {
      r.gnn_cost_on_feasible = g_feas / static_cast<double>(r.compared_feasible);
      r.baseline_cost_on_feasible = b_feas / static_cast<double>(r.compared_feasible);
    }
  }
  return r;
}

nlohmann::json to_json(const TestReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["n_samples"] = r.n_samples;
  j["mean_cost"] = r.mean_cost;
  j["mean_violation_rate"] = r.mean_violation_rate;
  j["fraction_with_violation"] = r.fraction_with_violation;
  j["mean_max_residual"] = r.mean_max_residual;
  nlohmann::json kinds = nlohmann::json::object();
  for (std::size_t k = 0; k < kConstraintKinds; ++k) {
    if (r.samples.empty() || r.samples.front().report.per_kind[k].count == 0) continue;
    std::vector<double> v;
    v.reserve(r.samples.size());
    for (const auto& e : r.samples) v.push_back(e.max_relative[k]);
    kinds[kind_name(static_cast<ConstraintKind>(k))] = v;
  }
  j["per_kind_max_relative_error"] = kinds;
  j["baseline"] = {{"converged", r.baseline_converged},
                   {"gnn_cost_on_converged", opt(r.gnn_cost_on_converged)},
                   {"baseline_cost_on_converged", opt(r.baseline_cost_on_converged)},
                   {"cost_ratio_converged", opt(r.cost_ratio_converged())},
                   {"compared_feasible", r.compared_feasible},
                   {"gnn_cost_on_feasible", opt(r.gnn_cost_on_feasible)},
                   {"baseline_cost_on_feasible", opt(r.baseline_cost_on_feasible)},
                   {"cost_ratio_feasible", opt(r.cost_ratio_feasible())}};
  return j;
}

void write_relative_errors_csv(const TestReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "sample_id,kind,element_id,rel_error\n";
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const auto& rep = r.samples[i].report;
    for (std::size_t m = 0; m < rep.margins.size(); ++m)
      out << i << ',' << kind_name(rep.margins[m].kind) << ',' << rep.margins[m].element << ',' << rep.relative[m] << '\n';
  }
}

} // namespace gnnopf

#pragma once

// Mini-batch training of the GNN on the unsupervised loss, and test-set
// evaluation against optional baseline dispatch costs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "gnnopf/dataset.hpp"
#include "gnnopf/gnn.hpp"
#include "gnnopf/metrics.hpp"
#include "gnnopf/optimizer.hpp"

namespace gnnopf {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  OptimizerConfig optimizer; // learning rate lives here
  PenaltyConfig penalty;
  GnnConfig gnn;
  std::uint64_t seed = 0;
  double validation_fraction = 0.05;
  std::size_t workers = 1;
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0; // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_violation_rate = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
};

struct TrainResult {
  GnnParams params; // best-validation parameters
  TrainHistory history;
};

// Throws DatasetError when the dataset was sampled from another case or its
// bus order differs from the model's.
void require_dataset_matches(const LoadDataset& ds, const GridModel& model);

// Seed-deterministic Fisher-Yates permutation of [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const TrainConfig& cfg, const LoadDataset& dataset, const GridModel& model,
                  const EpochCallback& on_epoch = {});

// Mean total loss over a dataset, computed in sample order.
double mean_loss(const GnnParams& params, const GridModel& model, const LoadDataset& ds, const PenaltyConfig& penalty,
                 std::size_t workers = 1);

void write_history_csv(const TrainHistory& h, const std::filesystem::path& path);

struct BaselineEntry {
  std::size_t sample_index = 0;
  bool converged = false;
  double cost = 0.0;
};

struct SampleEvaluation {
  double cost = 0.0;
  double violation_rate = 0.0;
  std::size_t violations = 0;
  double max_residual = 0.0;
  std::array<double, kConstraintKinds> max_relative{}; // per kind
  FeasibilityReport report;
};

struct TestReport {
  std::size_t n_samples = 0;
  double mean_cost = 0.0;
  double mean_violation_rate = 0.0;
  double fraction_with_violation = 0.0;
  double mean_max_residual = 0.0;
  std::vector<SampleEvaluation> samples;

  // Present when baseline entries were supplied.
  std::size_t baseline_converged = 0;
  std::optional<double> gnn_cost_on_converged;      // mean over baseline-converged samples
  std::optional<double> baseline_cost_on_converged;
  std::size_t compared_feasible = 0;                // converged and GNN violation-free
  std::optional<double> gnn_cost_on_feasible;
  std::optional<double> baseline_cost_on_feasible;

  std::optional<double> cost_ratio_converged() const;
  std::optional<double> cost_ratio_feasible() const;
};

TestReport evaluate_test_set(const GnnParams& params, const GridModel& model, const LoadDataset& test,
                             const std::vector<BaselineEntry>* baseline = nullptr, std::size_t workers = 1);

nlohmann::json to_json(const TestReport& r);

// sample_id,kind,element_id,rel_error for every constraint instance.
void write_relative_errors_csv(const TestReport& r, const std::filesystem::path& path);

} // namespace gnnopf

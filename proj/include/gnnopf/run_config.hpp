#pragma once

// JSON run configuration shared by the train and solve commands. Unknown
// keys are rejected so typos do not silently fall back to defaults.

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "gnnopf/baseline.hpp"
#include "gnnopf/grid_model.hpp"
#include "gnnopf/trainer.hpp"

namespace gnnopf {

struct RunConfig {
  std::uint64_t seed = 0;
  TrainConfig train;
  SolveConfig solve;
  GsoOptions graph;
};

// Missing sections and keys keep their defaults. The top-level seed feeds
// the GNN init, the data split and the solver restarts unless a section
// sets its own.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

} // namespace gnnopf

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "gnnopf/dataset.hpp"
#include "gnnopf/grid_model.hpp"
#include "gnnopf/matpower.hpp"

namespace testing {

inline std::filesystem::path data_dir() { return GNNOPF_DATA_DIR; }
inline std::filesystem::path fixture_dir() { return GNNOPF_TEST_DATA_DIR; }

inline const gnnopf::NetworkCase& case30() {
  static const gnnopf::NetworkCase c = gnnopf::load_matpower(data_dir() / "case30.m");
  return c;
}
inline const gnnopf::NetworkCase& two_bus() {
  static const gnnopf::NetworkCase c = gnnopf::load_matpower(fixture_dir() / "two_bus.m");
  return c;
}
inline const gnnopf::GridModel& case30_model() {
  static const gnnopf::GridModel m = gnnopf::build_grid_model(case30());
  return m;
}
inline const gnnopf::GridModel& two_bus_model() {
  static const gnnopf::GridModel m = gnnopf::build_grid_model(two_bus());
  return m;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("gnnopf_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

} // namespace testing

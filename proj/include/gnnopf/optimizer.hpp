#pragma once

// First-order parameter updates on flat parameter vectors.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gnnopf {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(const std::string& name);
const char* optimizer_name(OptimizerKind k);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void validate(const OptimizerConfig& cfg);

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<double> m; // first moment (adam)
  std::vector<double> v; // second moment (adam)
};

OptimizerState make_optimizer_state(std::size_t n);

// sgd: p <- p - lr g. adam: bias-corrected moment update.
void optimizer_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                    const OptimizerConfig& cfg);

} // namespace gnnopf

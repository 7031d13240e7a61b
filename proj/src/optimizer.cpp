#include "gnnopf/optimizer.hpp"

#include <cmath>

#include "gnnopf/error.hpp"

namespace gnnopf {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ValidationError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

void validate(const OptimizerConfig& cfg) {
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) throw ValidationError("learning rate must be positive");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) throw ValidationError("adam beta1 must lie in [0, 1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) throw ValidationError("adam beta2 must lie in [0, 1)");
  if (!(cfg.epsilon > 0.0)) throw ValidationError("adam epsilon must be positive");
}

OptimizerState make_optimizer_state(std::size_t n) {
  OptimizerState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void optimizer_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                    const OptimizerConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter and gradient sizes differ");
  ++state.step;
  if (cfg.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.learning_rate * grads[i];
    return;
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("optimizer: state does not match parameter count");
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mh = state.m[i] / c1;
    const double vh = state.v[i] / c2;
    params[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
  }
}

} // namespace gnnopf

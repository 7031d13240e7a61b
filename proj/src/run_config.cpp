#include "gnnopf/run_config.hpp"

#include <fstream>
#include <set>

#include "gnnopf/error.hpp"

namespace gnnopf {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError("config section '" + where + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ValidationError("unknown config key '" + where + "." + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config key '" + where + "." + key + "' has the wrong type");
  }
}

void read_penalty(const json& j, PenaltyConfig& p, const std::string& where) {
  check_keys(j, where, {"s", "t", "lambda", "mu"});
  read(j, "s", p.s, where);
  read(j, "t", p.t, where);
  read(j, "lambda", p.lambda, where);
  read(j, "mu", p.mu, where);
}

json penalty_json(const PenaltyConfig& p) { return {{"s", p.s}, {"t", p.t}, {"lambda", p.lambda}, {"mu", p.mu}}; }

} // namespace

RunConfig parse_run_config(const json& j) {
  check_keys(j, "config", {"seed", "workers", "gnn", "penalty", "optimizer", "train", "solve", "graph"});
  RunConfig c;
  read(j, "seed", c.seed, "config");
  c.train.seed = c.seed;
  c.train.gnn.seed = c.seed;
  c.solve.seed = c.seed;
  read(j, "workers", c.train.workers, "config");

  if (j.contains("gnn")) {
    const auto& g = j.at("gnn");
    check_keys(g, "gnn", {"layers", "taps", "features", "nonlinearity", "seed"});
    read(g, "layers", c.train.gnn.layers, "gnn");
    read(g, "taps", c.train.gnn.taps, "gnn");
    read(g, "features", c.train.gnn.features, "gnn");
    read(g, "seed", c.train.gnn.seed, "gnn");
    if (g.contains("nonlinearity")) {
      std::string name;
      read(g, "nonlinearity", name, "gnn");
      c.train.gnn.hidden = parse_nonlinearity(name);
    }
  }
  if (j.contains("penalty")) read_penalty(j.at("penalty"), c.train.penalty, "penalty");
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    check_keys(o, "optimizer", {"kind", "learning_rate", "beta1", "beta2", "epsilon"});
    if (o.contains("kind")) {
      std::string name;
      read(o, "kind", name, "optimizer");
      c.train.optimizer.kind = parse_optimizer(name);
    }
    read(o, "learning_rate", c.train.optimizer.learning_rate, "optimizer");
    read(o, "beta1", c.train.optimizer.beta1, "optimizer");
    read(o, "beta2", c.train.optimizer.beta2, "optimizer");
    read(o, "epsilon", c.train.optimizer.epsilon, "optimizer");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train", {"epochs", "batch_size", "validation_fraction", "seed"});
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "validation_fraction", c.train.validation_fraction, "train");
    read(t, "seed", c.train.seed, "train");
  }
  if (j.contains("solve")) {
    const auto& s = j.at("solve");
    check_keys(s, "solve", {"method", "max_iters", "step", "restarts", "residual_tolerance", "multiplier_rounds", "seed", "penalty"});
    if (s.contains("method")) {
      std::string name;
      read(s, "method", name, "solve");
      c.solve.method = parse_solve_method(name);
    }
    read(s, "max_iters", c.solve.max_iters, "solve");
    read(s, "step", c.solve.step, "solve");
    read(s, "restarts", c.solve.restarts, "solve");
    read(s, "residual_tolerance", c.solve.residual_tolerance, "solve");
    read(s, "multiplier_rounds", c.solve.multiplier_rounds, "solve");
    read(s, "seed", c.solve.seed, "solve");
    if (s.contains("penalty")) read_penalty(s.at("penalty"), c.solve.penalty, "solve.penalty");
  }
  if (j.contains("graph")) {
    const auto& g = j.at("graph");
    check_keys(g, "graph", {"alpha", "beta", "normalize"});
    if (g.contains("alpha") && !g.at("alpha").is_null()) {
      double a = 0.0;
      read(g, "alpha", a, "graph");
      c.graph.alpha = a;
    }
    read(g, "beta", c.graph.beta, "graph");
    read(g, "normalize", c.graph.normalize, "graph");
  }
  validate(c.train);
  validate(c.solve);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  json j;
  j["seed"] = c.seed;
  j["workers"] = t.workers;
  j["gnn"] = {{"layers", t.gnn.layers}, {"taps", t.gnn.taps}, {"features", t.gnn.features},
              {"nonlinearity", nonlinearity_name(t.gnn.hidden)}, {"seed", t.gnn.seed}};
  j["penalty"] = penalty_json(t.penalty);
  j["optimizer"] = {{"kind", optimizer_name(t.optimizer.kind)}, {"learning_rate", t.optimizer.learning_rate},
                    {"beta1", t.optimizer.beta1}, {"beta2", t.optimizer.beta2}, {"epsilon", t.optimizer.epsilon}};
  j["train"] = {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"validation_fraction", t.validation_fraction},
                {"seed", t.seed}};
  const auto& s = c.solve;
  j["solve"] = {{"method", solve_method_name(s.method)}, {"max_iters", s.max_iters}, {"step", s.step},
                {"restarts", s.restarts}, {"residual_tolerance", s.residual_tolerance},
                {"multiplier_rounds", s.multiplier_rounds}, {"seed", s.seed}, {"penalty", penalty_json(s.penalty)}};
  j["graph"] = {{"alpha", c.graph.alpha ? json(*c.graph.alpha) : json(nullptr)}, {"beta", c.graph.beta},
                {"normalize", c.graph.normalize}};
  return j;
}

} // namespace gnnopf

#include "gnnopf/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "gnnopf/error.hpp"
#include "gnnopf/kernels.hpp"

namespace gnnopf {

Nonlinearity parse_nonlinearity(const std::string& name) {
  if (name == "relu") return Nonlinearity::relu;
  if (name == "tanh") return Nonlinearity::tanh;
  throw ValidationError("unknown nonlinearity '" + name + "' (expected relu or tanh)");
}

const char* nonlinearity_name(Nonlinearity n) { return n == Nonlinearity::relu ? "relu" : "tanh"; }

void validate(const GnnConfig& cfg) {
  if (cfg.layers < 1) throw ValidationError("GNN needs at least one layer");
  if (cfg.features < 1) throw ValidationError("GNN hidden width must be at least 1");
}

std::vector<std::size_t> layer_widths(const GnnConfig& cfg) {
  std::vector<std::size_t> w(cfg.layers + 1, cfg.features);
  w.front() = kInputFeatures;
  w.back() = kOutputFeatures;
  return w;
}

double init_bound(std::size_t taps, std::size_t in, std::size_t out) {
  return std::sqrt(6.0 / (static_cast<double>(taps + 1) * static_cast<double>(in + out)));
}

std::size_t GnnParams::count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (const auto& t : l.taps) n += t.size();
  return n;
}

std::vector<double> GnnParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(count());
  for (const auto& l : layers)
    for (const auto& t : l.taps) flat.insert(flat.end(), t.data.begin(), t.data.end());
  return flat;
}

void GnnParams::assign(std::span<const double> flat) {
  if (flat.size() != count()) throw ShapeError("parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                                               std::to_string(count()));
  std::size_t off = 0;
  for (auto& l : layers) {
    for (auto& t : l.taps) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data.begin());
      off += t.size();
    }
  }
}

GnnParams init_params(const GnnConfig& cfg) {
  validate(cfg);
  GnnParams p;
  p.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  const auto widths = layer_widths(cfg);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    GnnLayer layer;
    layer.in = widths[l];
    layer.out = widths[l + 1];
    const double c = init_bound(cfg.taps, layer.in, layer.out);
    for (std::size_t k = 0; k <= cfg.taps; ++k) {
      Matrix h(layer.in, layer.out);
      for (double& e : h.data) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        e = c * (2.0 * u - 1.0);
      }
      layer.taps.push_back(std::move(h));
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

Matrix build_input(const GridModel& model, const DemandMatrix& demand) {
  if (demand.rows != model.n_buses || demand.cols != 2) {
    throw ShapeError("demand " + shape_str(demand) + " does not match a " + std::to_string(model.n_buses) + "-bus model");
  }
  Matrix u(model.n_buses, kInputFeatures);
  for (std::size_t i = 0; i < model.n_buses; ++i) {
    u(i, 0) = demand(i, 0);
    u(i, 1) = demand(i, 1);
    u(i, 2) = model.gen_lower(i, 0);
    u(i, 3) = model.gen_lower(i, 1);
    u(i, 4) = model.gen_upper(i, 0);
    u(i, 5) = model.gen_upper(i, 1);
    u(i, 6) = model.v_min[i];
    u(i, 7) = model.v_max[i];
  }
  return u;
}

Matrix graph_filter(const SparseMatrix& a, const Matrix& z, std::span<const Matrix> taps) {
  if (taps.empty()) throw ShapeError("graph filter needs at least one tap");
  if (a.n != z.rows) throw ShapeError("graph filter: operator size " + std::to_string(a.n) + " vs signal " + shape_str(z));
  const std::size_t fout = taps.front().cols;
  for (const auto& h : taps) {
    if (h.rows != z.cols || h.cols != fout) throw ShapeError("graph filter: tap " + shape_str(h) + " vs signal " + shape_str(z));
  }
  const auto& k = kernels::active();
  Matrix out(z.rows, fout);
  Matrix shifted = z;
  Matrix next(z.rows, z.cols);
  for (std::size_t t = 0; t < taps.size(); ++t) {
    if (t > 0) {
      next.reshape_zero(z.rows, z.cols);
      k.spmm_acc(a, z.cols, shifted.data.data(), next.data.data());
      std::swap(shifted, next);
    }
    k.gemm_nn_acc(z.rows, z.cols, fout, shifted.data.data(), taps[t].data.data(), out.data.data());
  }
  return out;
}

double bounded_sigmoid(double x, double a, double b) {
  const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp((b - a) * sig + a, a, b);
}

StateVars record_forward(ad::Tape& tape, const GnnParams& params, const GridModel& model, const LossContext& ctx,
                         const DemandMatrix& demand, std::vector<ad::Var>* param_vars) {
  auto z = tape.constant(build_input(model, demand));
  const std::size_t n_layers = params.layers.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const GnnLayer& layer = params.layers[l];
    ad::Var shifted = z;
    ad::Var out{};
    for (std::size_t k = 0; k < layer.taps.size(); ++k) {
      if (k > 0) shifted = tape.shift(shifted, model.gso_sparse, model.gso_sparse);
      const auto h = tape.parameter(layer.taps[k]);
      if (param_vars) param_vars->push_back(h);
      const auto term = tape.matmul(shifted, h);
      out = k == 0 ? term : tape.add(out, term);
    }
    if (l + 1 < n_layers) {
      z = params.config.hidden == Nonlinearity::relu ? tape.relu(out) : tape.tanh(out);
    } else {
      z = out;
    }
  }

  return record_head(tape, ctx, z, demand);
}

StateVars record_head(ad::Tape& tape, const LossContext& ctx, ad::Var z, const DemandMatrix& demand) {
  const std::size_t n = ctx.n_buses;
  StateVars s;
  s.pg = tape.bounded_sigmoid(tape.slice_cols(z, 0, 1), ctx.pg_lo, ctx.pg_hi);
  s.qg = tape.bounded_sigmoid(tape.slice_cols(z, 1, 1), ctx.qg_lo, ctx.qg_hi);
  s.v = tape.bounded_sigmoid(tape.slice_cols(z, 2, 1), ctx.v_lo, ctx.v_hi);
  const auto raw_delta = tape.slice_cols(z, 3, 1);
  s.delta = tape.sub(raw_delta, tape.gather_rows(raw_delta, ctx.reference_rows));
  s.p = tape.sub(s.pg, tape.constant(n, 1, demand.column_copy(0)));
  s.q = tape.sub(s.qg, tape.constant(n, 1, demand.column_copy(1)));
  return s;
}

namespace {

double injection_in_box(double gen, double demand, double lo, double hi) {
  double x = gen - demand;
  for (int i = 0; i < 8 && x + demand > hi; ++i) x = std::nextafter(x, -HUGE_VAL);
  for (int i = 0; i < 8 && x + demand < lo; ++i) x = std::nextafter(x, HUGE_VAL);
  return x;
}

} // namespace

BusState state_from_vars(const ad::Tape& tape, const StateVars& s, const LossContext& ctx, const DemandMatrix& demand) {
  const std::size_t n = tape.value(s.p).rows;
  BusState x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x.x(i, col::p) = injection_in_box(tape.value(s.pg).data[i], demand(i, 0), ctx.pg_lo[i], ctx.pg_hi[i]);
    x.x(i, col::q) = injection_in_box(tape.value(s.qg).data[i], demand(i, 1), ctx.qg_lo[i], ctx.qg_hi[i]);
    x.x(i, col::v) = tape.value(s.v).data[i];
    x.x(i, col::delta) = tape.value(s.delta).data[i];
  }
  return x;
}

BusState gnn_forward(const GnnParams& params, const GridModel& model, const DemandMatrix& demand) {
  const LossContext ctx = make_loss_context(model);
  ad::Tape tape;
  return state_from_vars(tape, record_forward(tape, params, model, ctx, demand), ctx, demand);
}

double loss_and_gradient(ad::Tape& tape, const GnnParams& params, const GridModel& model, const LossContext& ctx,
                         const DemandMatrix& demand, const PenaltyConfig& penalty, std::vector<double>* grad) {
  tape.reset();
  std::vector<ad::Var> vars;
  const StateVars s = record_forward(tape, params, model, ctx, demand, grad ? &vars : nullptr);
  const LossTerms terms = record_loss(tape, ctx, s, penalty);
  const double value = tape.scalar(terms.total);
  if (grad) {
    tape.backward(terms.total);
    grad->resize(params.count());
    std::size_t off = 0;
    for (const auto& v : vars) {
      const Matrix& g = tape.grad(v);
      std::copy(g.data.begin(), g.data.end(), grad->begin() + static_cast<std::ptrdiff_t>(off));
      off += g.size();
    }
  }
  return value;
}

GsoFingerprint fingerprint(const GridModel& model) {
  return {model.case_name, model.gso_stats.alpha, model.gso_stats.beta, model.gso_stats.normalized};
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto& cfg = ckpt.params.config;
  nlohmann::json j;
  j["format_version"] = 1;
  j["config"] = {{"L", cfg.layers}, {"K", cfg.taps}, {"F", cfg.features}, {"nonlinearity", nonlinearity_name(cfg.hidden)},
                 {"seed", cfg.seed}};
  j["gso"] = {{"case_name", ckpt.gso.case_name}, {"alpha", ckpt.gso.alpha}, {"beta", ckpt.gso.beta},
              {"normalize", ckpt.gso.normalize}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : ckpt.params.layers) {
    std::vector<double> flat;
    for (const auto& t : l.taps) flat.insert(flat.end(), t.data.begin(), t.data.end());
    layers.push_back({{"shape", {l.taps.size(), l.in, l.out}}, {"taps", flat}});
  }
  j["layers"] = layers;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  Checkpoint c;
  try {
    nlohmann::json j;
    in >> j;
    const auto& cfg = j.at("config");
    c.params.config.layers = cfg.at("L").get<std::size_t>();
    c.params.config.taps = cfg.at("K").get<std::size_t>();
    c.params.config.features = cfg.at("F").get<std::size_t>();
    c.params.config.hidden = parse_nonlinearity(cfg.at("nonlinearity").get<std::string>());
    c.params.config.seed = cfg.at("seed").get<std::uint64_t>();
    const auto& g = j.at("gso");
    c.gso.case_name = g.at("case_name").get<std::string>();
    c.gso.alpha = g.at("alpha").get<double>();
    c.gso.beta = g.at("beta").get<double>();
    c.gso.normalize = g.at("normalize").get<bool>();
    const auto widths = layer_widths(c.params.config);
    const auto& layers = j.at("layers");
    if (layers.size() != c.params.config.layers) throw ValidationError("checkpoint layer count does not match config");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto shape = layers[l].at("shape").get<std::vector<std::size_t>>();
      const auto flat = layers[l].at("taps").get<std::vector<double>>();
      if (shape.size() != 3 || shape[0] != c.params.config.taps + 1 || shape[1] != widths[l] || shape[2] != widths[l + 1] ||
          flat.size() != shape[0] * shape[1] * shape[2]) {
        throw ValidationError("checkpoint layer " + std::to_string(l) + " has inconsistent shape");
      }
      GnnLayer layer;
      layer.in = shape[1];
      layer.out = shape[2];
      for (std::size_t k = 0; k < shape[0]; ++k) {
        const auto begin = flat.begin() + static_cast<std::ptrdiff_t>(k * layer.in * layer.out);
        layer.taps.emplace_back(layer.in, layer.out, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(layer.in * layer.out)));
      }
      c.params.layers.push_back(std::move(layer));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return c;
}

} // namespace gnnopf

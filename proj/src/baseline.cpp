#include "gnnopf/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <limits>

#include "gnnopf/error.hpp"
#include "gnnopf/gnn.hpp"
#include "gnnopf/optimizer.hpp"
#include "gnnopf/parallel.hpp"

namespace gnnopf {

SolveMethod parse_solve_method(const std::string& name) {
  if (name == "sgd") return SolveMethod::sgd;
  if (name == "adam") return SolveMethod::adam;
  if (name == "lbfgs") return SolveMethod::lbfgs;
  if (name == "newton") return SolveMethod::newton;
  throw ValidationError("unknown solve method '" + name + "' (expected sgd, adam, lbfgs or newton)");
}

const char* solve_method_name(SolveMethod m) {
  switch (m) {
  case SolveMethod::sgd: return "sgd";
  case SolveMethod::adam: return "adam";
  case SolveMethod::lbfgs: return "lbfgs";
  case SolveMethod::newton: return "newton";
  }
  return "?";
}

void validate(const SolveConfig& cfg) {
  if (cfg.max_iters < 1) throw ValidationError("max_iters must be at least 1");
  if (!(cfg.residual_tolerance > 0.0)) throw ValidationError("residual tolerance must be positive");
  if (!(cfg.step > 0.0)) throw ValidationError("solver step must be positive");
  if (cfg.multiplier_rounds < 1) throw ValidationError("multiplier_rounds must be at least 1");
  validate(cfg.penalty);
}

namespace {

// Augmented objective: total loss plus y . residual. With y = 0 this is the
// training loss.
class Objective {
public:
  Objective(const GridModel& model, const DemandMatrix& demand, const PenaltyConfig& penalty)
      : model_(model), demand_(demand), penalty_(penalty), ctx_(make_loss_context(model)),
        y_p_(model.n_buses, 0.0), y_q_(model.n_buses, 0.0) {}

  std::size_t size() const { return model_.n_buses * 4; }

  double operator()(const std::vector<double>& z, std::vector<double>* grad) {
    record(z);
    const double f = tape_.scalar(root_);
    if (grad) {
      tape_.backward(root_);
      const Matrix& g = tape_.grad(leaf_);
      grad->assign(g.data.begin(), g.data.end());
    }
    return f;
  }

  // Residual magnitudes per bus at z.
  std::vector<double> residuals(const std::vector<double>& z) {
    record(z);
    const auto& rp = tape_.value(terms_.res_p).data;
    const auto& rq = tape_.value(terms_.res_q).data;
    std::vector<double> r(rp.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::hypot(rp[i], rq[i]);
    return r;
  }

  void update_multipliers(const std::vector<double>& z) {
    record(z);
    const auto& rp = tape_.value(terms_.res_p).data;
    const auto& rq = tape_.value(terms_.res_q).data;
    for (std::size_t i = 0; i < y_p_.size(); ++i) {
      y_p_[i] += 2.0 * penalty_.mu * rp[i];
      y_q_[i] += 2.0 * penalty_.mu * rq[i];
    }
  }

  void set_barrier_slope(double slope) { penalty_.s = slope; }
  void set_equality_weight(double mu) { penalty_.mu = mu; }

  void clear_multipliers() {
    std::fill(y_p_.begin(), y_p_.end(), 0.0);
    std::fill(y_q_.begin(), y_q_.end(), 0.0);
  }

  BusState state(const std::vector<double>& z) {
    record(z);
    return state_from_vars(tape_, vars_, ctx_, demand_);
  }

  // Hessian of the augmented objective, row-major n x n. The stiff
  // 2 mu J^T J block comes from the exact residual Jacobian; the remainder
  // (cost, barrier, multiplier-weighted residual curvature) is differenced
  // from gradients with the effective multipliers y + 2 mu r frozen at z.
  void hessian(std::vector<double> z, std::vector<double>& h) {
    const std::size_t n = z.size();
    const std::size_t nb = model_.n_buses;
    record(z);
    std::vector<double> yp = y_p_, yq = y_q_;
    {
      const auto& rp = tape_.value(terms_.res_p).data;
      const auto& rq = tape_.value(terms_.res_q).data;
      for (std::size_t i = 0; i < nb; ++i) {
        yp[i] += 2.0 * penalty_.mu * rp[i];
        yq[i] += 2.0 * penalty_.mu * rq[i];
      }
    }
    // Residual Jacobian rows via seeded reverse passes.
    std::vector<double> jac(2 * nb * n);
    Matrix seed(nb, 1);
    for (std::size_t part = 0; part < 2; ++part) {
      const ad::Var res = part == 0 ? terms_.res_p : terms_.res_q;
      for (std::size_t i = 0; i < nb; ++i) {
        std::fill(seed.data.begin(), seed.data.end(), 0.0);
        seed.data[i] = 1.0;
        tape_.backward(res, seed);
        const Matrix& g = tape_.grad(leaf_);
        std::copy(g.data.begin(), g.data.end(), jac.begin() + static_cast<std::ptrdiff_t>((part * nb + i) * n));
      }
    }
    h.assign(n * n, 0.0);
    std::vector<double> g0, gp;
    reduced_gradient(z, yp, yq, g0);
    for (std::size_t j = 0; j < n; ++j) {
      const double step = 1e-7 * std::max(1.0, std::abs(z[j]));
      const double keep = z[j];
      z[j] = keep + step;
      reduced_gradient(z, yp, yq, gp);
      z[j] = keep;
      for (std::size_t i = 0; i < n; ++i) h[i * n + j] = (gp[i] - g0[i]) / step;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) h[i * n + j] = h[j * n + i] = 0.5 * (h[i * n + j] + h[j * n + i]);
    const double w = 2.0 * penalty_.mu;
    for (std::size_t r = 0; r < 2 * nb; ++r) {
      const double* row = jac.data() + r * n;
      for (std::size_t i = 0; i < n; ++i) {
        if (row[i] == 0.0) continue;
        const double ri = w * row[i];
        for (std::size_t j = 0; j < n; ++j) h[i * n + j] += ri * row[j];
      }
    }
  }

private:
  // Gradient of cost + barrier + yp . res_p + yq . res_q (no squared term).
  void reduced_gradient(const std::vector<double>& z, const std::vector<double>& yp, const std::vector<double>& yq,
                        std::vector<double>& grad) {
    PenaltyConfig p = penalty_;
    p.mu = 0.0;
    record_with(z, yp, yq, p);
    tape_.backward(root_);
    const Matrix& g = tape_.grad(leaf_);
    grad.assign(g.data.begin(), g.data.end());
  }

  void record(const std::vector<double>& z) { record_with(z, y_p_, y_q_, penalty_); }

  void record_with(const std::vector<double>& z, const std::vector<double>& yp, const std::vector<double>& yq,
                   const PenaltyConfig& penalty) {
    tape_.reset();
    Matrix zm(model_.n_buses, 4);
    zm.data = z;
    leaf_ = tape_.parameter(zm);
    vars_ = record_head(tape_, ctx_, leaf_, demand_);
    terms_ = record_loss(tape_, ctx_, vars_, penalty);
    const std::size_t n = model_.n_buses;
    const auto lag = tape_.add(tape_.sum(tape_.mul(terms_.res_p, tape_.constant(n, 1, yp))),
                               tape_.sum(tape_.mul(terms_.res_q, tape_.constant(n, 1, yq))));
    root_ = tape_.add(terms_.total, lag);
  }

  const GridModel& model_;
  const DemandMatrix& demand_;
  PenaltyConfig penalty_;
  LossContext ctx_;
  std::vector<double> y_p_, y_q_;
  ad::Tape tape_;
  ad::Var leaf_{}, root_{};
  StateVars vars_{};
  LossTerms terms_{};
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double inf_norm(const std::vector<double>& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

// Limited-memory BFGS with Armijo backtracking. Returns iterations used.
std::size_t minimize_lbfgs(Objective& f, std::vector<double>& x, std::size_t budget) {
  constexpr std::size_t kMemory = 10;
  std::vector<std::vector<double>> s_hist, y_hist;
  std::vector<double> rho;
  std::vector<double> g, g_new, d(x.size()), x_new(x.size());
  double fx = f(x, &g);
  std::size_t it = 0;
  std::size_t flat_steps = 0;
  for (; it < budget; ++it) {
    if (inf_norm(g) < 1e-10) break;
    // two-loop recursion
    d = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho[k] * dot(s_hist[k], d);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= alpha[k] * y_hist[k][i];
    }
    if (!s_hist.empty()) {
      const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (double& v : d) v *= gamma;
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho[k] * dot(y_hist[k], d);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += (alpha[k] - beta) * s_hist[k][i];
    }
    for (double& v : d) v = -v;
    double slope = dot(g, d);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho.clear();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = -g[i];
      slope = dot(g, d);
    }
    double step = s_hist.empty() ? std::min(1.0, 1.0 / std::max(inf_norm(g), 1e-12)) : 1.0;
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < x.size(); ++i) x_new[i] = x[i] + step * d[i];
      f_new = f(x_new, &g_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (s_hist.empty()) break; // steepest descent failed too
      s_hist.clear();
      y_hist.clear();
      rho.clear();
      continue;
    }
    std::vector<double> sv(x.size()), yv(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      sv[i] = x_new[i] - x[i];
      yv[i] = g_new[i] - g[i];
    }
    const double sy = dot(sv, yv);
    if (sy > 1e-16 * std::sqrt(dot(sv, sv) * dot(yv, yv))) {
      if (s_hist.size() == kMemory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho.erase(rho.begin());
      }
      s_hist.push_back(std::move(sv));
      y_hist.push_back(std::move(yv));
      rho.push_back(1.0 / sy);
    }
    const double change = fx - f_new;
    x = x_new;
    g = g_new;
    fx = f_new;
    flat_steps = change <= 1e-15 * std::max(1.0, std::abs(fx)) ? flat_steps + 1 : 0;
    if (flat_steps >= 5) {
      ++it;
      break;
    }
  }
  return it;
}

// Dense Cholesky solve of (H + lambda diag) d = -g; false when not positive definite.
bool solve_damped(const std::vector<double>& h, std::size_t n, double lambda, const std::vector<double>& g,
                  std::vector<double>& d) {
  std::vector<double> l(h);
  for (std::size_t i = 0; i < n; ++i) l[i * n + i] += lambda * std::max(std::abs(h[i * n + i]), 1.0);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = l[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= l[j * n + k] * l[j * n + k];
    if (!(diag > 0.0) || !std::isfinite(diag)) return false;
    diag = std::sqrt(diag);
    l[j * n + j] = diag;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = l[i * n + j];
      for (std::size_t k = 0; k < j; ++k) v -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = v / diag;
    }
  }
  d.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double v = -g[i];
    for (std::size_t k = 0; k < i; ++k) v -= l[i * n + k] * d[k];
    d[i] = v / l[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double v = d[i];
    for (std::size_t k = i + 1; k < n; ++k) v -= l[k * n + i] * d[k];
    d[i] = v / l[i * n + i];
  }
  return true;
}

// Levenberg-Marquardt damped Newton. Returns iterations used.
std::size_t minimize_newton(Objective& f, std::vector<double>& x, std::size_t budget, double gtol) {
  const std::size_t n = x.size();
  std::vector<double> g, d, x_try(n), h(n * n);
  double fx = f(x, &g);
  double lambda = 1e-3;
  std::size_t it = 0, flat_steps = 0;
  for (; it < budget; ++it) {
    if (inf_norm(g) < gtol) break;
    f.hessian(x, h);
    bool accepted = false;
    double f_try = fx;
    for (int trial = 0; trial < 40 && !accepted; ++trial) {
      if (solve_damped(h, n, lambda, g, d)) {
        for (std::size_t i = 0; i < n; ++i) x_try[i] = x[i] + d[i];
        f_try = f(x_try, nullptr);
        if (std::isfinite(f_try) && f_try < fx) {
          accepted = true;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
    lambda = std::max(lambda / 3.0, 1e-12);
    const double change = fx - f_try;
    x = x_try;
    fx = f(x, &g);
    flat_steps = change <= 1e-12 * std::max(1.0, std::abs(fx)) ? flat_steps + 1 : 0;
    if (flat_steps >= 2) {
      ++it;
      break;
    }
  }
  return it;
}

std::size_t minimize_first_order(Objective& f, std::vector<double>& x, std::size_t budget, const SolveConfig& cfg,
                                 OptimizerState& state) {
  OptimizerConfig oc;
  oc.kind = cfg.method == SolveMethod::sgd ? OptimizerKind::sgd : OptimizerKind::adam;
  oc.learning_rate = cfg.step;
  std::vector<double> g;
  std::size_t it = 0;
  for (; it < budget; ++it) {
    f(x, &g);
    if (inf_norm(g) < 1e-10) break;
    optimizer_step(x, g, state, oc);
  }
  return it;
}

double max_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

} // namespace

SolveResult solve_from(const GridModel& model, const DemandMatrix& demand, const Matrix& z0, const SolveConfig& cfg) {
  validate(cfg);
  if (demand.rows != model.n_buses || demand.cols != 2) throw ShapeError("demand " + shape_str(demand) + " does not match the case");
  if (z0.rows != model.n_buses || z0.cols != 4) throw ShapeError("initial logits " + shape_str(z0) + " must be N x 4");
  Objective f(model, demand, cfg.penalty);
  std::vector<double> x = z0.data;
  OptimizerState opt = make_optimizer_state(x.size());
  const std::size_t per_round = std::max<std::size_t>(1, cfg.max_iters / cfg.multiplier_rounds);
  // Barrier slope continuation: start mild and grow tenfold per round so the
  // iterate enters the feasible side before the barrier stiffens. Once at
  // full slope, a residual that shrinks less than fourfold per round raises
  // the equality weight, and a balanced but infeasible iterate raises the
  // slope further; both are capped at 1e4 times their configured values.
  double slope = std::min(cfg.penalty.s, 10.0);
  double gtol = 1.0; // inner gradient tolerance, tightened per round
  double slope_cap = cfg.penalty.s;
  double mu = cfg.penalty.mu;
  double prev_res = std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  for (std::size_t round = 0; round < cfg.multiplier_rounds && used < cfg.max_iters; ++round) {
    f.set_barrier_slope(slope);
    const std::size_t budget = std::min(per_round, cfg.max_iters - used);
    switch (cfg.method) {
    case SolveMethod::newton: used += minimize_newton(f, x, budget, gtol); break;
    case SolveMethod::lbfgs: used += minimize_lbfgs(f, x, budget); break;
    default: used += minimize_first_order(f, x, budget, cfg, opt); break;
    }
    const double res = max_of(f.residuals(x));
    if (slope >= cfg.penalty.s && res <= 0.1 * cfg.residual_tolerance) {
      if (feasibility_report(model, f.state(x), demand, cfg.residual_tolerance).violation_count() == 0) break;
      slope_cap = std::min(slope_cap * 10.0, 1e4 * cfg.penalty.s);
    }
    if (slope >= cfg.penalty.s && res > 0.25 * prev_res && mu < 1e4 * cfg.penalty.mu) {
      mu *= 10.0;
      f.set_equality_weight(mu);
    }
    prev_res = res;
    f.update_multipliers(x);
    slope = std::min(slope_cap, slope * 10.0);
    gtol = std::max(1e-6, gtol * 0.1);
  }
  f.set_barrier_slope(cfg.penalty.s);
  f.set_equality_weight(cfg.penalty.mu);
  f.clear_multipliers();

  SolveResult r;
  r.state = f.state(x);
  r.loss = f(x, nullptr);
  r.report = feasibility_report(model, r.state, demand, cfg.residual_tolerance);
  r.cost = r.report.generation_cost;
  r.iterations = used;
  r.converged = r.report.equality_satisfied() && r.report.violation_count() == 0;
  return r;
}

SolveResult solve_instance(const GridModel& model, const DemandMatrix& demand, const SolveConfig& cfg) {
  validate(cfg);
  Matrix z(model.n_buses, 4); // flat start: box midpoints, zero angles
  SolveResult best = solve_from(model, demand, z, cfg);
  std::mt19937_64 rng(cfg.seed);
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (std::size_t r = 1; r <= cfg.restarts; ++r) {
    for (std::size_t i = 0; i < model.n_buses; ++i) {
      for (std::size_t c = 0; c < 3; ++c) z(i, c) = -2.0 + 4.0 * uniform();
      z(i, 3) = 0.0;
    }
    SolveResult cand = solve_from(model, demand, z, cfg);
    cand.restart = r;
    if (cand.loss < best.loss) best = std::move(cand);
  }
  return best;
}

double BatchResult::convergence_fraction() const {
  if (results.empty()) return 0.0;
  return static_cast<double>(results.size() - discarded.size()) / static_cast<double>(results.size());
}

BatchResult batch_solve(const GridModel& model, const LoadDataset& ds, const SolveConfig& cfg, std::size_t workers) {
  validate(cfg);
  require_dataset_matches(ds, model);
  BatchResult b;
  b.results.resize(ds.size());
  parallel_for(ds.size(), workers, [&](std::size_t, std::size_t i) { b.results[i] = solve_instance(model, ds.samples[i], cfg); });
  for (std::size_t i = 0; i < b.results.size(); ++i)
    if (!b.results[i].converged) b.discarded.push_back(i);
  return b;
}

void write_batch(const BatchResult& b, const GridModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < b.results.size(); ++i) {
    const auto& r = b.results[i];
    list.push_back({{"sample_id", i},
                    {"converged", r.converged},
                    {"cost", r.cost},
                    {"loss", r.loss},
                    {"violation_rate", r.report.violation_rate},
                    {"max_residual", r.report.max_equality_residual},
                    {"iterations", r.iterations},
                    {"restart", r.restart}});
  }
  nlohmann::json j;
  j["results"] = list;
  j["convergence_fraction"] = b.convergence_fraction();
  j["discarded"] = b.discarded;
  {
    std::ofstream out(dir / "results.json");
    if (!out) throw Error("cannot write " + (dir / "results.json").string());
    out << j.dump(2) << '\n';
  }
  std::ofstream out(dir / "states.csv");
  if (!out) throw Error("cannot write " + (dir / "states.csv").string());
  out.precision(17);
  out << "sample_id,bus_id,p,q,v,delta\n";
  for (std::size_t i = 0; i < b.results.size(); ++i) {
    const auto& x = b.results[i].state;
    for (std::size_t k = 0; k < x.n_buses(); ++k)
      out << i << ',' << model.bus_ids[k] << ',' << x.p(k) << ',' << x.q(k) << ',' << x.v(k) << ',' << x.delta(k) << '\n';
  }
}

std::vector<BaselineEntry> read_baseline_entries(const std::filesystem::path& dir) {
  const auto path = dir / "results.json";
  std::ifstream in(path);
  if (!in) throw Error("cannot read baseline results " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("baseline results " + path.string() + ": " + e.what());
  }
  std::vector<BaselineEntry> out;
  for (const auto& r : j.at("results"))
    out.push_back({r.at("sample_id").get<std::size_t>(), r.at("converged").get<bool>(), r.at("cost").get<double>()});
  return out;
}

} // namespace gnnopf

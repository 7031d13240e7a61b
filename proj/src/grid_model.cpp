#include "gnnopf/grid_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "gnnopf/error.hpp"

namespace gnnopf {

BusState::BusState(Matrix m) : x(std::move(m)) {
  if (x.cols != 4) throw ShapeError("bus state must have 4 columns, got " + shape_str(x));
}

double spectral_radius(const Matrix& a, double tol, std::size_t max_iters) {
  const std::size_t n = a.rows;
  if (n == 0) return 0.0;
  std::vector<double> x(n, 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> ax(n), y(n);
  auto mul = [&](const std::vector<double>& in, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += a(i, j) * in[j];
      out[i] = acc;
    }
  };
  double rho = 0.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    mul(x, ax);
    mul(ax, y);
    double ny = 0.0;
    for (double e : y) ny += e * e;
    ny = std::sqrt(ny);
    if (ny == 0.0) return 0.0;
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = y[i] / ny;
      change = std::max(change, std::abs(xi - x[i]));
      x[i] = xi;
    }
    // Rayleigh quotient of A^2 at the normalized iterate is |A x|^2.
    mul(x, ax);
    double nax = 0.0;
    for (double e : ax) nax += e * e;
    rho = std::sqrt(nax);
    if (change <= tol) break;
  }
  return rho;
}

GridModel build_grid_model(const NetworkCase& net, const GsoOptions& options) {
  if (options.alpha && !(*options.alpha >= 0.0)) throw ValidationError("alpha must be non-negative");
  if (!(options.beta >= 0.0 && options.beta < 1.0)) throw ValidationError("beta must lie in [0, 1)");

  GridModel m;
  m.case_name = net.name;
  m.case_digest = net.digest;
  m.n_buses = net.buses.size();
  m.gso_options = options;
  const std::size_t n = m.n_buses;

  std::map<int, std::size_t> index;
  bool have_ref = false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = net.buses[i];
    index[b.bus_id] = i;
    m.bus_ids.push_back(b.bus_id);
    m.v_min.push_back(b.v_min);
    m.v_max.push_back(b.v_max);
    m.shunt.push_back(b.shunt_admittance);
    if (b.type == BusType::reference) {
      if (have_ref) throw ModelError("more than one reference bus (bus " + std::to_string(b.bus_id) + ")");
      have_ref = true;
      m.reference_bus = i;
    }
  }
  if (!have_ref) throw ModelError("case has no reference bus");

  m.gen_at_bus.assign(n, -1);
  m.gen_lower = Matrix(n, 2);
  m.gen_upper = Matrix(n, 2);
  for (const auto& g : net.generators) {
    Generator gen;
    gen.gen_id = g.gen_id;
    gen.bus = index.at(g.bus_id);
    gen.p_min = g.p_min;
    gen.p_max = g.p_max;
    gen.q_min = g.q_min;
    gen.q_max = g.q_max;
    gen.cost = g.cost;
    if (m.gen_at_bus[gen.bus] >= 0) {
      throw ModelError("bus " + std::to_string(g.bus_id) + " has more than one generator (gens " +
                       std::to_string(m.generators[m.gen_at_bus[gen.bus]].gen_id) + " and " + std::to_string(g.gen_id) + ")");
    }
    m.gen_at_bus[gen.bus] = static_cast<int>(m.generators.size());
    m.gen_lower(gen.bus, 0) = g.p_min;
    m.gen_lower(gen.bus, 1) = g.q_min;
    m.gen_upper(gen.bus, 0) = g.p_max;
    m.gen_upper(gen.bus, 1) = g.q_max;
    m.generators.push_back(std::move(gen));
  }

  // Parallel branches share one graph edge weighted by their combined
  // series admittance.
  std::map<std::pair<std::size_t, std::size_t>, Complex> edge_admittance;
  for (const auto& br : net.branches) {
    Branch b;
    b.branch_id = br.branch_id;
    b.from = index.at(br.from_bus);
    b.to = index.at(br.to_bus);
    b.y_series = br.series_admittance();
    b.y_charge_from = b.y_charge_to = Complex(0.0, br.total_charging / 2.0);
    b.tap = br.tap();
    b.rate_max = br.rate_max;
    b.ang_min = br.ang_min;
    b.ang_max = br.ang_max;
    m.branches.push_back(b);
    edge_admittance[{std::min(b.from, b.to), std::max(b.from, b.to)}] += b.y_series;
  }

  std::vector<double> mag2;
  for (const auto& [edge, y] : edge_admittance) mag2.push_back(std::norm(y));
  double alpha = 0.0;
  if (options.alpha) {
    alpha = *options.alpha;
  } else if (!mag2.empty()) {
    std::vector<double> sorted = mag2;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t k = sorted.size();
    const double median = k % 2 ? sorted[k / 2] : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]);
    alpha = std::numbers::ln2 * median;
  }

  m.gso = Matrix(n, n);
  GsoStats stats;
  stats.alpha = alpha;
  stats.beta = options.beta;
  stats.normalized = options.normalize;
  for (const auto& [edge, y] : edge_admittance) {
    const double w = std::exp(-alpha / std::norm(y));
    if (w > options.beta) {
      m.gso(edge.first, edge.second) = w;
      m.gso(edge.second, edge.first) = w;
      ++stats.edges_kept;
    } else {
      ++stats.edges_dropped;
    }
  }
  if (stats.edges_kept == 0) throw ModelError("no graph edge survives the weight threshold beta");

  stats.spectral_radius_raw = spectral_radius(m.gso);
  if (options.normalize) {
    for (double& w : m.gso.data) w /= stats.spectral_radius_raw;
  }
  m.gso_sparse = SparseMatrix::from_dense(m.gso);
  m.gso_stats = stats;
  return m;
}

BranchFlows branch_flows(const GridModel& model, std::span<const double> v, std::span<const double> delta) {
  BranchFlows out;
  out.fwd.reserve(model.n_branches());
  out.rev.reserve(model.n_branches());
  for (const auto& b : model.branches) {
    const Complex vi = std::polar(v[b.from], delta[b.from]);
    const Complex vj = std::polar(v[b.to], delta[b.to]);
    const Complex t = b.tap;
    out.fwd.push_back(std::conj(b.y_series + b.y_charge_from) * std::norm(vi) / std::norm(t) -
                      std::conj(b.y_series) * vi * std::conj(vj) / t);
    out.rev.push_back(std::conj(b.y_series + b.y_charge_to) * std::norm(vj) -
                      std::conj(b.y_series) * std::conj(vi) * vj / std::conj(t));
  }
  return out;
}

std::vector<Complex> power_balance_residual(const GridModel& model, const BusState& x) {
  if (x.n_buses() != model.n_buses) throw ShapeError("bus state has " + std::to_string(x.n_buses()) + " rows, model has " +
                                                     std::to_string(model.n_buses) + " buses");
  const auto v = x.v_column();
  const auto d = x.delta_column();
  const BranchFlows flows = branch_flows(model, v, d);
  std::vector<Complex> r(model.n_buses);
  for (std::size_t i = 0; i < model.n_buses; ++i) {
    r[i] = Complex(x.p(i), x.q(i)) - std::conj(model.shunt[i]) * (v[i] * v[i]);
  }
  for (std::size_t k = 0; k < model.n_branches(); ++k) {
    r[model.branches[k].from] -= flows.fwd[k];
    r[model.branches[k].to] -= flows.rev[k];
  }
  return r;
}

DemandMatrix aggregate_demand(std::size_t n_buses, std::span<const LoadEntry> loads) {
  DemandMatrix d(n_buses, 2);
  for (const auto& l : loads) {
    if (l.bus >= n_buses) throw ValidationError("load references bus index " + std::to_string(l.bus) + " out of range");
    d(l.bus, 0) += l.demand.real();
    d(l.bus, 1) += l.demand.imag();
  }
  return d;
}

GenerationMatrix generation_from_state(const BusState& x, const DemandMatrix& demand) {
  if (demand.rows != x.n_buses() || demand.cols != 2) throw ShapeError("demand shape " + shape_str(demand) + " does not match state");
  GenerationMatrix g(x.n_buses(), 2);
  for (std::size_t i = 0; i < x.n_buses(); ++i) {
    g(i, 0) = x.p(i) + demand(i, 0);
    g(i, 1) = x.q(i) + demand(i, 1);
  }
  return g;
}

Matrix injections_from_generation(const GenerationMatrix& gen, const DemandMatrix& demand) {
  if (!gen.same_shape(demand) || gen.cols != 2) throw ShapeError("generation " + shape_str(gen) + " vs demand " + shape_str(demand));
  Matrix pq(gen.rows, 2);
  for (std::size_t i = 0; i < gen.size(); ++i) pq.data[i] = gen.data[i] - demand.data[i];
  return pq;
}

BusState make_state(const GenerationMatrix& gen, const DemandMatrix& demand, std::span<const double> v,
                    std::span<const double> delta) {
  const Matrix pq = injections_from_generation(gen, demand);
  if (v.size() != gen.rows || delta.size() != gen.rows) throw ShapeError("voltage vectors do not match bus count");
  BusState x(gen.rows);
  for (std::size_t i = 0; i < gen.rows; ++i) {
    x.x(i, col::p) = pq(i, 0);
    x.x(i, col::q) = pq(i, 1);
    x.x(i, col::v) = v[i];
    x.x(i, col::delta) = delta[i];
  }
  return x;
}

double generation_cost(const GridModel& model, const GenerationMatrix& gen) {
  if (gen.rows != model.n_buses || gen.cols != 2) throw ShapeError("generation shape " + shape_str(gen) + " does not match model");
  double total = 0.0;
  for (const auto& g : model.generators) total += g.cost(gen(g.bus, 0));
  return total;
}

} // namespace gnnopf

#include "gnnopf/matpower.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "gnnopf/error.hpp"

namespace gnnopf {
namespace {

using Rows = std::vector<std::vector<double>>;

constexpr double kDeg = std::numbers::pi / 180.0;

// MATPOWER column indices (0-based).
namespace bus_col {
constexpr int id = 0, type = 1, pd = 2, qd = 3, gs = 4, bs = 5, vmax = 11, vmin = 12;
}
namespace gen_col {
constexpr int bus = 0, qmax = 3, qmin = 4, status = 7, pmax = 8, pmin = 9;
}
namespace br_col {
constexpr int f = 0, t = 1, r = 2, x = 3, b = 4, rate_a = 5, ratio = 8, angle = 9, status = 10, angmin = 11, angmax = 12;
}

std::string strip_comments(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_comment = false;
  bool in_string = false;
  for (char c : text) {
    if (c == '\n') {
      in_comment = false;
      in_string = false;
      out.push_back(c);
      continue;
    }
    if (in_comment) continue;
    if (c == '\'') in_string = !in_string;
    if (c == '%' && !in_string) {
      in_comment = true;
      continue;
    }
    out.push_back(c);
  }
  return out;
}

struct Sections {
  std::string name;
  std::optional<double> base_mva;
  std::map<std::string, Rows> matrices;
};

std::size_t skip_ws(const std::string& s, std::size_t i) {
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return i;
}

Rows parse_matrix_body(const std::string& body, const std::string& section) {
  Rows rows;
  std::vector<double> current;
  auto flush = [&] {
    if (!current.empty()) rows.push_back(std::move(current));
    current.clear();
  };
  std::size_t i = 0;
  while (i < body.size()) {
    const char c = body[i];
    if (c == ';' || c == '\n') {
      flush();
      ++i;
    } else if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      ++i;
    } else if (c == '.' && body.compare(i, 3, "...") == 0) {
      // line continuation: swallow through the newline
      i = body.find('\n', i);
      if (i == std::string::npos) break;
      ++i;
    } else {
      const char* begin = body.c_str() + i;
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      if (end == begin) throw ParseError("mpc." + section + ": unexpected token near '" + body.substr(i, 16) + "'");
      current.push_back(v);
      i += static_cast<std::size_t>(end - begin);
    }
  }
  flush();
  const std::size_t width = rows.empty() ? 0 : rows.front().size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != width) {
      throw ParseError("mpc." + section + ": row " + std::to_string(r + 1) + " has " + std::to_string(rows[r].size()) +
                       " columns, expected " + std::to_string(width));
    }
  }
  return rows;
}

Sections scan(std::string_view raw) {
  const std::string s = strip_comments(raw);
  Sections out;

  if (auto f = s.find("function"); f != std::string::npos) {
    auto eq = s.find('=', f);
    auto nl = s.find('\n', f);
    if (eq != std::string::npos && eq < nl) {
      std::string name = s.substr(eq + 1, nl - eq - 1);
      const auto a = name.find_first_not_of(" \t\r");
      const auto b = name.find_last_not_of(" \t\r;");
      out.name = a == std::string::npos ? "" : name.substr(a, b - a + 1);
    }
  }

  std::size_t pos = 0;
  while ((pos = s.find("mpc.", pos)) != std::string::npos) {
    std::size_t i = pos + 4;
    std::size_t j = i;
    while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
    const std::string key = s.substr(i, j - i);
    j = skip_ws(s, j);
    if (j >= s.size() || s[j] != '=') {
      pos = j;
      continue;
    }
    j = skip_ws(s, j + 1);
    if (j < s.size() && s[j] == '[') {
      const auto close = s.find(']', j);
      if (close == std::string::npos) throw ParseError("mpc." + key + ": unterminated matrix");
      out.matrices[key] = parse_matrix_body(s.substr(j + 1, close - j - 1), key);
      pos = close + 1;
    } else if (key == "baseMVA") {
      const char* begin = s.c_str() + j;
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      if (end == begin) throw ParseError("mpc.baseMVA: expected a number");
      out.base_mva = v;
      pos = j + static_cast<std::size_t>(end - begin);
    } else {
      pos = j;
    }
  }
  return out;
}

const Rows& require(const Sections& s, const std::string& key, std::size_t min_cols) {
  auto it = s.matrices.find(key);
  if (it == s.matrices.end()) throw ParseError("missing " + key + " section");
  for (std::size_t r = 0; r < it->second.size(); ++r) {
    if (it->second[r].size() < min_cols) {
      throw ParseError("mpc." + key + ": row " + std::to_string(r + 1) + " has " + std::to_string(it->second[r].size()) +
                       " columns, need at least " + std::to_string(min_cols));
    }
  }
  return it->second;
}

CostPolynomial read_cost(const std::vector<double>& row, std::size_t gen_row, double base_mva) {
  const int model = static_cast<int>(row[0]);
  if (model == 1) {
    throw UnsupportedFeature("gencost row " + std::to_string(gen_row) + ": piecewise-linear cost (model 1) is not supported");
  }
  if (model != 2) throw ParseError("gencost row " + std::to_string(gen_row) + ": unknown cost model " + std::to_string(model));
  const auto n = static_cast<std::size_t>(row[3]);
  if (n == 0) throw ParseError("gencost row " + std::to_string(gen_row) + ": polynomial with no coefficients");
  if (row.size() < 4 + n) throw ParseError("gencost row " + std::to_string(gen_row) + ": NCOST exceeds the row width");
  CostPolynomial poly;
  poly.coefficients.resize(n);
  // c(P_MW) = sum a_k P_MW^k with P_MW = base * P_pu
  for (std::size_t i = 0; i < n; ++i) {
    const auto power = static_cast<int>(n - 1 - i);
    poly.coefficients[i] = row[4 + i] * std::pow(base_mva, power);
  }
  return poly;
}

void validate(const NetworkCase& c) {
  if (!(c.base_mva > 0.0)) throw ValidationError("baseMVA must be positive");
  std::set<int> ids;
  for (const auto& b : c.buses) {
    if (!ids.insert(b.bus_id).second) throw ValidationError("bus " + std::to_string(b.bus_id) + " appears more than once");
    if (!(b.v_min > 0.0)) throw ValidationError("bus " + std::to_string(b.bus_id) + ": Vmin must be positive");
    if (b.v_min > b.v_max) throw ValidationError("bus " + std::to_string(b.bus_id) + ": Vmin > Vmax");
  }
  std::vector<std::string> dangling;
  for (const auto& g : c.generators) {
    if (!ids.count(g.bus_id)) dangling.push_back("gen " + std::to_string(g.gen_id) + " -> bus " + std::to_string(g.bus_id));
    if (g.p_min > g.p_max) throw ValidationError("gen " + std::to_string(g.gen_id) + ": Pmin > Pmax");
    if (g.q_min > g.q_max) throw ValidationError("gen " + std::to_string(g.gen_id) + ": Qmin > Qmax");
  }
  for (const auto& br : c.branches) {
    const std::string tag = "branch " + std::to_string(br.branch_id);
    if (!ids.count(br.from_bus)) dangling.push_back(tag + " -> bus " + std::to_string(br.from_bus));
    if (!ids.count(br.to_bus)) dangling.push_back(tag + " -> bus " + std::to_string(br.to_bus));
    if (br.from_bus == br.to_bus) throw ValidationError(tag + ": from_bus equals to_bus");
    if (br.series_impedance == Complex{}) throw ValidationError(tag + ": zero series impedance");
  }
  if (!dangling.empty()) {
    std::string msg = "dangling bus reference:";
    for (const auto& d : dangling) msg += " [" + d + "]";
    throw ValidationError(msg);
  }
}

} // namespace

std::size_t NetworkCase::bus_index(int bus_id) const {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].bus_id == bus_id) return i;
  throw ValidationError("unknown bus id " + std::to_string(bus_id));
}

Complex NetworkCase::total_demand() const {
  Complex total;
  for (const auto& b : buses) total += b.demand_ref;
  return total;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RawCounts raw_matrix_counts(std::string_view text) {
  const Sections s = scan(text);
  auto count = [&](const char* key) -> std::size_t {
    auto it = s.matrices.find(key);
    return it == s.matrices.end() ? 0 : it->second.size();
  };
  return {count("bus"), count("gen"), count("branch"), count("gencost")};
}

NetworkCase parse_matpower(std::string_view text) {
  const Sections s = scan(text);
  if (!s.base_mva) throw ParseError("missing baseMVA section");
  const Rows& bus = require(s, "bus", 13);
  const Rows& gen = require(s, "gen", 10);
  const Rows& branch = require(s, "branch", 11);

  NetworkCase c;
  c.name = s.name;
  c.base_mva = *s.base_mva;
  c.digest = fnv1a_hex(text);
  if (!(c.base_mva > 0.0)) throw ValidationError("baseMVA must be positive");
  const double base = c.base_mva;

  for (const auto& r : bus) {
    BusRecord b;
    b.bus_id = static_cast<int>(r[bus_col::id]);
    const int type = static_cast<int>(r[bus_col::type]);
    if (type < 1 || type > 4) throw ParseError("bus " + std::to_string(b.bus_id) + ": unknown bus type " + std::to_string(type));
    b.type = static_cast<BusType>(type);
    b.demand_ref = {r[bus_col::pd] / base, r[bus_col::qd] / base};
    b.shunt_admittance = {r[bus_col::gs] / base, r[bus_col::bs] / base};
    b.v_max = r[bus_col::vmax];
    b.v_min = r[bus_col::vmin];
    c.buses.push_back(b);
  }

  const Rows* gencost = nullptr;
  if (auto it = s.matrices.find("gencost"); it != s.matrices.end()) {
    gencost = &it->second;
    if (gencost->size() < gen.size()) {
      throw ParseError("gencost has " + std::to_string(gencost->size()) + " rows but gen has " + std::to_string(gen.size()));
    }
    for (std::size_t r = 0; r < gencost->size(); ++r) {
      if ((*gencost)[r].size() < 5) throw ParseError("mpc.gencost: row " + std::to_string(r + 1) + " is too short");
    }
    c.has_cost = true;
  }

  for (std::size_t i = 0; i < gen.size(); ++i) {
    const auto& r = gen[i];
    GenRecord g;
    g.gen_id = static_cast<int>(i + 1);
    g.bus_id = static_cast<int>(r[gen_col::bus]);
    g.in_service = r[gen_col::status] > 0.0;
    g.p_max = r[gen_col::pmax] / base;
    g.p_min = r[gen_col::pmin] / base;
    g.q_max = r[gen_col::qmax] / base;
    g.q_min = r[gen_col::qmin] / base;
    // Only the active-power block (first ng rows) is read.
    if (gencost) g.cost = read_cost((*gencost)[i], i + 1, base);
    if (g.in_service) c.generators.push_back(std::move(g));
  }

  for (std::size_t i = 0; i < branch.size(); ++i) {
    const auto& r = branch[i];
    BranchRecord br;
    br.branch_id = static_cast<int>(i + 1);
    br.from_bus = static_cast<int>(r[br_col::f]);
    br.to_bus = static_cast<int>(r[br_col::t]);
    br.series_impedance = {r[br_col::r], r[br_col::x]};
    br.total_charging = r[br_col::b];
    br.tap_ratio = r[br_col::ratio] == 0.0 ? 1.0 : r[br_col::ratio];
    br.phase_shift = r[br_col::angle] * kDeg;
    if (r[br_col::rate_a] != 0.0) br.rate_max = r[br_col::rate_a] / base;
    br.in_service = r[br_col::status] > 0.0;
    if (r.size() > static_cast<std::size_t>(br_col::angmax)) {
      const double lo = r[br_col::angmin];
      const double hi = r[br_col::angmax];
      if (!(lo == 0.0 && hi == 0.0)) {
        if (lo > -360.0) br.ang_min = lo * kDeg;
        if (hi < 360.0) br.ang_max = hi * kDeg;
      }
    }
    if (br.in_service) c.branches.push_back(br);
  }

  validate(c);
  return c;
}

NetworkCase load_matpower(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open case file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  NetworkCase c = parse_matpower(ss.str());
  if (c.name.empty()) c.name = path.stem().string();
  return c;
}

} // namespace gnnopf

// gnnopf: command-line front end for parsing cases, sampling load datasets,
// training the GNN, running the baseline solver and evaluating results.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gnnopf/baseline.hpp"
#include "gnnopf/dataset.hpp"
#include "gnnopf/error.hpp"
#include "gnnopf/gnn.hpp"
#include "gnnopf/grid_model.hpp"
#include "gnnopf/kernels.hpp"
#include "gnnopf/matpower.hpp"
#include "gnnopf/metrics.hpp"
#include "gnnopf/parallel.hpp"
#include "gnnopf/run_config.hpp"
#include "gnnopf/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gnnopf;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json inputs = json::object();
  std::uint64_t seed = 0;
  std::string started = utc_now();

  json finish() const {
    return {{"command", command},   {"argv", argv},           {"config", config},
            {"inputs", inputs},     {"seed", seed},           {"tool_version", kToolVersion},
            {"kernels", kernels::active().name}, {"started_at", started}, {"finished_at", utc_now()}};
  }
};

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw Error(std::string(what) + " not found: " + p.string());
}

NetworkCase read_case(const fs::path& p) {
  require_file(p, "case file");
  return load_matpower(p);
}

LoadDataset read_dataset(const fs::path& dir, const NetworkCase& net) {
  require_file(dir, "dataset directory");
  auto loaded = load_dataset(dir, net.name);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
  if (loaded.dataset.case_digest != net.digest) throw DatasetError("dataset was sampled from a different case");
  return std::move(loaded.dataset);
}

// bus_id,p,q,v,delta per bus, in any order.
BusState read_state_csv(const fs::path& p, const GridModel& model) {
  require_file(p, "state file");
  std::ifstream in(p);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("state file is empty");
  if (line.rfind("bus_id,p,q,v,delta", 0) != 0) throw ParseError("state file header must be bus_id,p,q,v,delta");
  BusState x(model.n_buses);
  std::vector<bool> seen(model.n_buses, false);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw ParseError("state file row " + std::to_string(row) + ": expected 5 fields");
    int id = 0;
    double vals[4];
    try {
      id = std::stoi(cells[0]);
      for (int k = 0; k < 4; ++k) vals[k] = std::stod(cells[1 + k]);
    } catch (const std::exception&) {
      throw ParseError("state file row " + std::to_string(row) + ": malformed number");
    }
    const auto it = std::find(model.bus_ids.begin(), model.bus_ids.end(), id);
    if (it == model.bus_ids.end()) throw ValidationError("state file names unknown bus " + std::to_string(id));
    const auto i = static_cast<std::size_t>(it - model.bus_ids.begin());
    if (seen[i]) throw ValidationError("state file repeats bus " + std::to_string(id));
    seen[i] = true;
    for (int k = 0; k < 4; ++k) x.x(i, static_cast<std::size_t>(k)) = vals[k];
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw ValidationError("state file is missing bus " + std::to_string(model.bus_ids[i]));
  return x;
}

int run(int argc, char** argv) {
  CLI::App app{"GNN-based AC optimal power flow toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string kernel_choice = "auto";
  app.add_option("--kernels", kernel_choice, "Inner-loop kernels: auto, scalar or avx2")
      ->check(CLI::IsMember({"auto", "scalar", "avx2"}));
  std::size_t workers = default_workers();
  app.add_option("--workers", workers, "Parallel workers for batch and sample loops")->check(CLI::PositiveNumber);

  Manifest manifest;
  manifest.argv.assign(argv, argv + argc);

  // parse
  auto* parse_cmd = app.add_subcommand("parse", "Validate a MATPOWER case and print a summary");
  std::string case_path, json_out;
  parse_cmd->add_option("case", case_path, "MATPOWER .m file")->required();
  parse_cmd->add_option("--json-out", json_out, "Write the summary to this file");

  // graph
  auto* graph_cmd = app.add_subcommand("graph", "Build the graph shift operator and print its statistics");
  graph_cmd->add_option("case", case_path, "MATPOWER .m file")->required();
  std::optional<double> alpha;
  double beta = 0.01;
  bool no_normalize = false;
  std::string edges_csv;
  graph_cmd->add_option("--alpha", alpha, "Edge-weight scale (default ln2 * median |Y|^2)");
  graph_cmd->add_option("--beta", beta, "Edge-weight threshold");
  graph_cmd->add_flag("--no-normalize", no_normalize, "Skip spectral normalization");
  graph_cmd->add_option("--edges-csv", edges_csv, "Write kept edges as from_bus,to_bus,weight");

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "Draw a load dataset around the reference demand");
  sample_cmd->add_option("case", case_path, "MATPOWER .m file")->required();
  long long n_samples = 0;
  std::uint64_t seed = 0;
  double low = 0.9, high = 1.1;
  std::string out_dir;
  sample_cmd->add_option("--n", n_samples, "Number of samples")->required();
  sample_cmd->add_option("--seed", seed, "Random seed");
  sample_cmd->add_option("--low", low, "Lower scale factor");
  sample_cmd->add_option("--high", high, "Upper scale factor");
  sample_cmd->add_option("--out", out_dir, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the GNN on a dataset");
  train_cmd->add_option("case", case_path, "MATPOWER .m file")->required();
  std::string data_dir, config_path;
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  train_cmd->add_option("--config", config_path, "JSON run config");
  train_cmd->add_option("--out", out_dir, "Output directory")->required();

  // solve
  auto* solve_cmd = app.add_subcommand("solve", "Run the baseline solver on every sample of a dataset");
  solve_cmd->add_option("case", case_path, "MATPOWER .m file")->required();
  solve_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  solve_cmd->add_option("--config", config_path, "JSON run config");
  solve_cmd->add_option("--out", out_dir, "Output directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a test dataset");
  eval_cmd->add_option("case", case_path, "MATPOWER .m file")->required();
  std::string checkpoint_path, baseline_dir;
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint JSON")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--baseline", baseline_dir, "Baseline results directory");
  eval_cmd->add_option("--out", out_dir, "Output directory")->required();

  // check
  auto* check_cmd = app.add_subcommand("check", "Feasibility report for an external bus state");
  check_cmd->add_option("case", case_path, "MATPOWER .m file")->required();
  std::string state_path;
  check_cmd->add_option("--state", state_path, "CSV with bus_id,p,q,v,delta")->required();
  check_cmd->add_option("--data", data_dir, "Dataset supplying the demand (default: reference demand)");
  std::size_t sample_index = 0;
  check_cmd->add_option("--sample", sample_index, "Sample index within --data");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  if (kernel_choice != "auto") kernels::select(kernels::parse_isa(kernel_choice));

  if (parse_cmd->parsed()) {
    const NetworkCase net = read_case(case_path);
    std::size_t gens_on = 0, branches_on = 0;
    for (const auto& g : net.generators) gens_on += g.in_service;
    for (const auto& b : net.branches) branches_on += b.in_service;
    const Complex d = net.total_demand();
    json j = {{"case_name", net.name},
              {"digest", net.digest},
              {"base_mva", net.base_mva},
              {"buses", net.buses.size()},
              {"generators", net.generators.size()},
              {"generators_in_service", gens_on},
              {"branches", net.branches.size()},
              {"branches_in_service", branches_on},
              {"has_cost", net.has_cost},
              {"total_demand_pu", {{"p", d.real()}, {"q", d.imag()}}}};
    std::cout << j.dump(2) << '\n';
    if (!json_out.empty()) write_json(json_out, j);
    return 0;
  }

  if (graph_cmd->parsed()) {
    const NetworkCase net = read_case(case_path);
    GsoOptions opt;
    opt.alpha = alpha;
    opt.beta = beta;
    opt.normalize = !no_normalize;
    const GridModel model = build_grid_model(net, opt);
    const auto& s = model.gso_stats;
    json j = {{"case_name", model.case_name},
              {"alpha", s.alpha},
              {"beta", s.beta},
              {"normalized", s.normalized},
              {"edges_kept", s.edges_kept},
              {"edges_dropped", s.edges_dropped},
              {"spectral_radius_raw", s.spectral_radius_raw},
              {"spectral_radius", s.normalized ? 1.0 : s.spectral_radius_raw}};
    std::cout << j.dump(2) << '\n';
    if (!edges_csv.empty()) {
      std::ofstream out(edges_csv);
      if (!out) throw Error("cannot write " + edges_csv);
      out.precision(17);
      out << "from_bus,to_bus,weight\n";
      for (std::size_t i = 0; i < model.n_buses; ++i)
        for (std::size_t k = i + 1; k < model.n_buses; ++k)
          if (model.gso(i, k) != 0.0) out << model.bus_ids[i] << ',' << model.bus_ids[k] << ',' << model.gso(i, k) << '\n';
    }
    return 0;
  }

  if (sample_cmd->parsed()) {
    if (n_samples < 1) throw UsageError("--n must be at least 1");
    const NetworkCase net = read_case(case_path);
    const LoadDataset ds = sample_loads(net, static_cast<std::size_t>(n_samples), seed, low, high);
    save_dataset(ds, out_dir);
    // The dataset manifest doubles as the run manifest for this directory.
    const fs::path mpath = fs::path(out_dir) / "manifest.json";
    std::ifstream in(mpath);
    json m = json::parse(in);
    in.close();
    manifest.command = "sample";
    manifest.seed = seed;
    manifest.config = {{"n", n_samples}, {"seed", seed}, {"low", low}, {"high", high}};
    manifest.inputs = {{"case", {{"path", case_path}, {"digest", net.digest}}}};
    m["run"] = manifest.finish();
    write_json(mpath, m);
    std::cout << "wrote " << ds.size() << " samples to " << out_dir << '\n';
    return 0;
  }

  if (train_cmd->parsed()) {
    const NetworkCase net = read_case(case_path);
    const RunConfig cfg = config_path.empty() ? parse_run_config(json::object()) : load_run_config(config_path);
    const GridModel model = build_grid_model(net, cfg.graph);
    const LoadDataset ds = read_dataset(data_dir, net);
    TrainConfig tc = cfg.train;
    if (app.get_option("--workers")->count() > 0) tc.workers = workers;
    const TrainResult res = train(tc, ds, model, [](const EpochRecord& e) {
      std::cerr << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss
                << " val_violation_rate " << e.val_violation_rate << " (" << e.seconds << " s)\n";
    });
    fs::create_directories(out_dir);
    save_checkpoint({res.params, fingerprint(model)}, fs::path(out_dir) / "checkpoint.json");
    write_history_csv(res.history, fs::path(out_dir) / "history.csv");
    manifest.command = "train";
    manifest.seed = cfg.seed;
    manifest.config = to_json(cfg);
    manifest.config["workers"] = tc.workers;
    manifest.inputs = {{"case", {{"path", case_path}, {"digest", net.digest}}},
                       {"dataset", {{"path", data_dir}, {"digest", file_digest(fs::path(data_dir) / "samples.csv")}}}};
    json m = manifest.finish();
    m["best_epoch"] = res.history.best_epoch;
    m["best_val_loss"] = res.history.best_val_loss;
    write_json(fs::path(out_dir) / "manifest.json", m);
    std::cout << "best epoch " << res.history.best_epoch << ", validation loss " << res.history.best_val_loss << '\n';
    return 0;
  }

  if (solve_cmd->parsed()) {
    const NetworkCase net = read_case(case_path);
    const RunConfig cfg = config_path.empty() ? parse_run_config(json::object()) : load_run_config(config_path);
    const GridModel model = build_grid_model(net, cfg.graph);
    const LoadDataset ds = read_dataset(data_dir, net);
    const BatchResult b = batch_solve(model, ds, cfg.solve, workers);
    write_batch(b, model, out_dir);
    manifest.command = "solve";
    manifest.seed = cfg.solve.seed;
    manifest.config = to_json(cfg);
    manifest.inputs = {{"case", {{"path", case_path}, {"digest", net.digest}}},
                       {"dataset", {{"path", data_dir}, {"digest", file_digest(fs::path(data_dir) / "samples.csv")}}}};
    write_json(fs::path(out_dir) / "manifest.json", manifest.finish());
    std::cout << "converged " << b.results.size() - b.discarded.size() << " of " << b.results.size() << '\n';
    return 0;
  }

  if (eval_cmd->parsed()) {
    const NetworkCase net = read_case(case_path);
    require_file(checkpoint_path, "checkpoint");
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    GsoOptions opt;
    opt.alpha = ckpt.gso.alpha;
    opt.beta = ckpt.gso.beta;
    opt.normalize = ckpt.gso.normalize;
    const GridModel model = build_grid_model(net, opt);
    if (ckpt.gso.case_name != model.case_name) throw DatasetError("checkpoint was trained on a different case");
    const LoadDataset ds = read_dataset(data_dir, net);
    std::vector<BaselineEntry> baseline;
    if (!baseline_dir.empty()) baseline = read_baseline_entries(baseline_dir);
    const TestReport r = evaluate_test_set(ckpt.params, model, ds, baseline_dir.empty() ? nullptr : &baseline, workers);
    fs::create_directories(out_dir);
    write_json(fs::path(out_dir) / "report.json", to_json(r));
    write_relative_errors_csv(r, fs::path(out_dir) / "relative_errors.csv");
    manifest.command = "eval";
    manifest.inputs = {{"case", {{"path", case_path}, {"digest", net.digest}}},
                       {"checkpoint", {{"path", checkpoint_path}, {"digest", file_digest(checkpoint_path)}}},
                       {"dataset", {{"path", data_dir}, {"digest", file_digest(fs::path(data_dir) / "samples.csv")}}}};
    if (!baseline_dir.empty())
      manifest.inputs["baseline"] = {{"path", baseline_dir}, {"digest", file_digest(fs::path(baseline_dir) / "results.json")}};
    write_json(fs::path(out_dir) / "manifest.json", manifest.finish());
    std::cout << "mean cost " << r.mean_cost << ", mean violation rate " << r.mean_violation_rate << '\n';
    return 0;
  }

  if (check_cmd->parsed()) {
    const NetworkCase net = read_case(case_path);
    const GridModel model = build_grid_model(net);
    DemandMatrix demand = reference_demand(net);
    if (!data_dir.empty()) {
      const LoadDataset ds = read_dataset(data_dir, net);
      if (sample_index >= ds.size()) throw UsageError("--sample " + std::to_string(sample_index) + " is out of range");
      demand = ds.samples[sample_index];
    }
    const BusState x = read_state_csv(state_path, model);
    std::cout << to_json(feasibility_report(model, x, demand)).dump(2) << '\n';
    return 0;
  }
  return 2;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DatasetError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const UnsupportedFeature& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

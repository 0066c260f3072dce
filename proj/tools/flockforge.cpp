// flockforge command-line driver: gen-data, train, simulate, evaluate, quad-compare.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "flockforge/config.hpp"
#include "flockforge/experiment.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace flockforge;

namespace {

enum Exit { kOk = 0, kConfig = 2, kDivergence = 3, kIo = 4 };

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dataset;
  std::string checkpoint;
  std::string controller;
  std::string plant;
  std::vector<std::string> trajectories;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string absolute(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

// Everything a run needs, resolved from the config file (or a previous
// manifest) plus flags.
struct Run {
  std::string command;
  ExperimentConfig config;
  json inputs = json::object();
  fs::path out;
  std::vector<std::string> outputs;

  void write(const std::string& name, const std::string& text) {
    write_file(out / name, text);
    outputs.push_back(name);
  }

  void finish() const {
    json m;
    m["schema_version"] = kSchemaVersion;
    m["command"] = command;
    m["config"] = json::parse(config_json(config));
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    write_file(out / "manifest.json", m.dump(2) + "\n");
  }
};

Run resolve(const std::string& command, Options& o) {
  if (o.config_path.empty()) throw ConfigError("--config is required");
  json doc;
  try {
    doc = json::parse(read_file(o.config_path));
  } catch (const json::exception& e) {
    throw ConfigError(o.config_path + ": not valid JSON: " + e.what());
  }
  Run run;
  run.command = command;
  json config_doc = doc;
  // A manifest from an earlier run: reuse its resolved config and inputs.
  if (doc.is_object() && doc.contains("command") && doc.contains("config")) {
    if (doc["command"] != command)
      throw ConfigError("manifest was written by '" + doc["command"].get<std::string>() + "', not '" + command + "'");
    config_doc = doc["config"];
    const json& in = doc.value("inputs", json::object());
    auto fill = [&](std::string& field, const char* key) {
      if (field.empty() && in.contains(key)) field = in[key].get<std::string>();
    };
    fill(o.dataset, "dataset");
    fill(o.checkpoint, "checkpoint");
    fill(o.controller, "controller");
    fill(o.plant, "plant");
    if (o.trajectories.empty() && in.contains("trajectories"))
      o.trajectories = in["trajectories"].get<std::vector<std::string>>();
  }
  run.config = parse_config(config_doc.dump(), o.sets);
  if (o.seed) {
    if (command == "gen-data") run.config.data.seed = *o.seed;
    if (command == "train") run.config.adam.seed = *o.seed;
    if (command == "simulate" || command == "quad-compare") run.config.eval.seed = *o.seed;
  }
  run.out = o.out.empty() ? fs::path("runs") / run.config.profile / command : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(run.out, ec);
  if (ec) throw IoError("cannot create " + run.out.string() + ": " + ec.message());
  return run;
}

json timing_json(const std::string& controller, const LoopStats& s) {
  return {{"controller", controller},
          {"decisions", s.decisions},
          {"seconds_per_decision", s.decisions ? s.decision_seconds / s.decisions : 0.0},
          {"seconds_per_agent_decision", s.agent_decisions ? s.decision_seconds / s.agent_decisions : 0.0}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void log(const std::string& msg) { std::cerr << "flockforge: " << msg << '\n'; }

void gen_data(Options& o) {
  Run run = resolve("gen-data", o);
  const auto& c = run.config;
  const auto t0 = std::chrono::steady_clock::now();
  const MpcProblem problem = c.centralized_problem();
  const BatchResult batch = run_batch(
      c.scenario(), [&] { return std::make_unique<CentralizedMpc>(problem); }, c.data.seed, c.data.trajectories,
      default_threads());
  const Dataset data = extract_samples(batch.trajectories, c.layout);
  save_trajectories((run.out / "expert.traj.jsonl").string(), batch.trajectories);
  run.outputs.push_back("expert.traj.jsonl");
  save_dataset((run.out / "dataset.data.jsonl").string(), data);
  run.outputs.push_back("dataset.data.jsonl");
  json timing = timing_json("cmpc", batch.stats);
  timing["wall_seconds"] = seconds_since(t0);
  write_file(run.out / "timing.json", timing.dump(2) + "\n");
  run.finish();
  log(std::to_string(batch.trajectories.size()) + " trajectories, " + std::to_string(data.size()) + " samples -> " +
      run.out.string());
}

void train_cmd(Options& o) {
  Run run = resolve("train", o);
  const auto& c = run.config;
  if (o.dataset.empty()) throw ConfigError("--dataset is required");
  run.inputs["dataset"] = absolute(o.dataset);
  const Dataset data = load_dataset(o.dataset);
  if (data.layout != c.layout)
    throw ConfigError("dataset layout " + layout_name(data.layout) + " does not match data.layout " +
                      layout_name(c.layout));
  const DatasetSplit split = split_by_trajectory(data, c.data.holdout_fraction);
  log("training on " + std::to_string(split.train.size()) + " samples, holding out " +
      std::to_string(split.holdout.size()));
  const auto t0 = std::chrono::steady_clock::now();
  const int every = std::max(1, c.adam.epochs / 20);
  const TrainResult result =
      train(split.train, c.train_config(), split.holdout.size() ? &split.holdout : nullptr, [&](int epoch, double loss) {
        if (epoch == 1 || epoch % every == 0) log("epoch " + std::to_string(epoch) + " mse " + std::to_string(loss));
      });
  run.write("checkpoint.json", checkpoint_json(result.net, c.layout));
  std::ostringstream loss;
  write_loss_csv(loss, result);
  run.write("loss.csv", loss.str());
  write_file(run.out / "timing.json", json({{"train_seconds", seconds_since(t0)}}).dump(2) + "\n");
  run.finish();
}

Mlp load_net(const std::string& path, Layout expected) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.layout != expected)
    throw ConfigError("checkpoint layout " + layout_name(ck.layout) + " does not match " + layout_name(expected));
  return ck.net;
}

void simulate(Options& o) {
  Run run = resolve("simulate", o);
  const auto& c = run.config;
  if (o.controller.empty()) o.controller = "cmpc";
  if (o.plant.empty()) o.plant = "point";
  if (o.plant != "point" && o.plant != "quad") throw ConfigError("--plant must be point or quad");
  run.inputs["controller"] = o.controller;
  run.inputs["plant"] = o.plant;

  Scenario scenario = c.scenario();
  scenario.quad_plant = o.plant == "quad";
  if (scenario.quad_plant && (c.sim.dim != 3 || c.task != Task::BasicFlocking))
    throw ConfigError("--plant quad needs a 3D basic flocking config");
  ControllerFactory factory;
  const MpcProblem central = c.centralized_problem();
  const MpcProblem distributed = c.distributed_problem();
  Mlp net;
  if (o.controller == "cmpc") {
    factory = [&] { return std::make_unique<CentralizedMpc>(central); };
  } else if (o.controller == "dmpc") {
    factory = [&] { return std::make_unique<DistributedMpc>(distributed, c.neighbors); };
  } else if (o.controller == "dnc") {
    if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required for the dnc controller");
    run.inputs["checkpoint"] = absolute(o.checkpoint);
    net = load_net(o.checkpoint, c.layout);
    factory = [&] {
      return std::make_unique<NeuralController>(net, c.layout, c.sim.a_max, central.cost.obstacles, central.cost.target);
    };
  } else {
    throw ConfigError("--controller must be cmpc, dmpc or dnc");
  }
  const BatchResult batch = run_batch(scenario, factory, c.eval.seed, c.eval.runs, default_threads());
  save_trajectories((run.out / "trajectories.traj.jsonl").string(), batch.trajectories);
  run.outputs.push_back("trajectories.traj.jsonl");
  write_file(run.out / "timing.json", timing_json(o.controller, batch.stats).dump(2) + "\n");
  run.finish();
  log(std::to_string(batch.trajectories.size()) + " " + o.controller + " runs -> " + run.out.string());
}

MetricSeries mean_series(const std::vector<MetricSeries>& runs) {
  MetricSeries m;
  if (runs.empty()) return m;
  std::size_t len = runs.front().diameter.size();
  for (const auto& r : runs) len = std::min(len, r.diameter.size());
  m.diameter.assign(len, 0.0);
  m.vc.assign(len, 0.0);
  for (const auto& r : runs) {
    for (std::size_t k = 0; k < len; ++k) {
      m.diameter[k] += r.diameter[k] / static_cast<double>(runs.size());
      m.vc[k] += r.vc[k] / static_cast<double>(runs.size());
    }
  }
  return m;
}

void evaluate(Options& o) {
  Run run = resolve("evaluate", o);
  const auto& c = run.config;
  if (o.trajectories.empty()) throw ConfigError("--trajectories is required");
  json reports = json::array();
  json timed = json::array();
  std::string csv = EvalReport::csv_header(false) + "\n";
  json inputs = json::array();
  for (std::size_t f = 0; f < o.trajectories.size(); ++f) {
    const std::string& path = o.trajectories[f];
    inputs.push_back(absolute(path));
    const auto trajs = load_trajectories(path);
    EvalReport r = evaluate_trajectories(trajs, c.cost.d_min, c.cost.d_min_pred, c.eval.count_mode);
    reports.push_back(json::parse(r.to_json(false)));
    csv += r.csv_row(false) + "\n";
    std::ostringstream series;
    write_series_csv(series, mean_series(series_of(trajs)));
    run.write("series" + (o.trajectories.size() > 1 ? "_" + std::to_string(f) : std::string()) + ".csv", series.str());

    // Timing stays out of the reproducible report; pick it up from the
    // producing run if it left one.
    const fs::path timing = fs::path(path).parent_path() / "timing.json";
    if (fs::exists(timing)) {
      const json t = json::parse(read_file(timing.string()));
      r.seconds_per_decision = t.value("seconds_per_decision", 0.0);
      r.seconds_per_agent_decision = t.value("seconds_per_agent_decision", 0.0);
      timed.push_back(json::parse(r.to_json(true)));
    }
  }
  run.inputs["trajectories"] = inputs;
  run.write("report.json", reports.dump(2) + "\n");
  run.write("report.csv", csv);
  if (!timed.empty()) write_file(run.out / "timing.json", timed.dump(2) + "\n");
  run.finish();
  std::cout << csv;
}

void quad_compare(Options& o) {
  Run run = resolve("quad-compare", o);
  const auto& c = run.config;
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  run.inputs["checkpoint"] = absolute(o.checkpoint);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  if (ck.layout != Layout::BF36) throw ConfigError("quad-compare needs a BF36 checkpoint, got " + layout_name(ck.layout));
  const QuadComparison q = run_quad_comparison(c, ck.net, default_threads());

  const std::pair<const char*, const BatchResult*> sets[] = {
      {"dnc-point", &q.dnc_point}, {"dnc-quad", &q.dnc_quad}, {"cmpc-point", &q.cmpc_point}, {"cmpc-quad", &q.cmpc_quad}};
  json timing = json::array();
  for (const auto& [name, batch] : sets) {
    save_trajectories((run.out / (std::string(name) + ".traj.jsonl")).string(), batch->trajectories);
    run.outputs.push_back(std::string(name) + ".traj.jsonl");
    json t = timing_json(name, batch->stats);
    t["ms_per_decision"] = t["seconds_per_decision"].get<double>() * 1e3;
    timing.push_back(t);
  }
  std::ostringstream gap;
  gap.precision(17);
  gap << "step,dnc_dD,dnc_dVC,cmpc_dD,cmpc_dVC\n";
  const std::size_t len = std::min({q.dnc_dD.delta.size(), q.dnc_dVC.delta.size(), q.cmpc_dD.delta.size(),
                                    q.cmpc_dVC.delta.size()});
  for (std::size_t k = 0; k < len; ++k)
    gap << k << ',' << q.dnc_dD.delta[k] << ',' << q.dnc_dVC.delta[k] << ',' << q.cmpc_dD.delta[k] << ','
        << q.cmpc_dVC.delta[k] << '\n';
  run.write("gap.csv", gap.str());

  const double dnc_d = late_mean_diameter(series_of(q.dnc_point.trajectories));
  const double cmpc_d = late_mean_diameter(series_of(q.cmpc_point.trajectories));
  const json summary = {
      {"dnc", {{"late_abs_dD", late_mean_abs(q.dnc_dD.delta)}, {"late_point_diameter", dnc_d}}},
      {"cmpc", {{"late_abs_dD", late_mean_abs(q.cmpc_dD.delta)}, {"late_point_diameter", cmpc_d}}},
  };
  run.write("summary.json", summary.dump(2) + "\n");
  write_file(run.out / "timing.json", timing.dump(2) + "\n");
  run.finish();
  std::cout << summary.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flocking controllers: MPC experts, neural imitation and quadrotor transfer"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "experiment config or a previous run's manifest.json")->required();
    sub->add_option("--set", o.sets, "override a config key, e.g. --set train.epochs=500");
    sub->add_option("--seed", o.seed, "base seed for this stage");
    sub->add_option("--out", o.out, "output directory");
  };
  auto* gen = app.add_subcommand("gen-data", "expert CMPC trajectories and the training dataset");
  common(gen);
  auto* tr = app.add_subcommand("train", "behaviour-clone a neural controller");
  common(tr);
  tr->add_option("--dataset", o.dataset, "dataset file from gen-data");
  auto* sim = app.add_subcommand("simulate", "closed-loop runs of one controller");
  common(sim);
  sim->add_option("--controller", o.controller, "cmpc, dmpc or dnc");
  sim->add_option("--checkpoint", o.checkpoint, "network for --controller dnc");
  sim->add_option("--plant", o.plant, "point or quad");
  auto* ev = app.add_subcommand("evaluate", "metrics and collision report for trajectory files");
  common(ev);
  ev->add_option("--trajectories", o.trajectories, "trajectory files");
  auto* qc = app.add_subcommand("quad-compare", "DNC and CMPC on point and quadrotor plants");
  common(qc);
  qc->add_option("--checkpoint", o.checkpoint, "BF36 network");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*gen) gen_data(o);
    if (*tr) train_cmd(o);
    if (*sim) simulate(o);
    if (*ev) evaluate(o);
    if (*qc) quad_compare(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  }
  return kOk;
}

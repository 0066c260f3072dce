#include "flockforge/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <set>
#include <thread>

#include <json.hpp>

namespace flockforge {

using json = nlohmann::json;

FlockState initial_state(const Scenario& scenario, std::uint64_t seed) {
  const auto& pr = scenario.problem;
  FlockState f = sample_initial_flock(scenario.agents, seed, pr.sim, pr.cost.d_min, scenario.box);
  if (pr.cost.task == Task::PredatorAvoidance) f.predator = place_predator(f, pr.predator);
  return f;
}

BatchResult run_batch(const Scenario& scenario, const ControllerFactory& make_controller, std::uint64_t seed,
                      int count, int threads) {
  BatchResult out;
  if (count <= 0) return out;
  scenario.problem.sim.validate();
  out.trajectories.resize(count);
  std::vector<LoopStats> stats(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<int> next{0};

  auto worker = [&] {
    std::unique_ptr<Controller> controller;
    for (int k = next++; k < count; k = next++) {
      try {
        if (!controller) controller = make_controller();
        const auto& pr = scenario.problem;
        const FlockState start = initial_state(scenario, seed + k);
        Trajectory t = scenario.quad_plant ? quad_flock_loop(start, *controller, pr.sim, scenario.quad, &stats[k])
                                           : control_loop(start, *controller, pr.sim, pr.predator, &stats[k]);
        t.meta.task = pr.cost.task;
        t.meta.seed = seed + k;
        t.meta.obstacles = pr.cost.obstacles;
        t.meta.target = pr.cost.target;
        out.trajectories[k] = std::move(t);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(threads, 1, count);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  // Report the failure of the lowest seed so errors do not depend on scheduling.
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& s : stats) {
    out.stats.decision_seconds += s.decision_seconds;
    out.stats.decisions += s.decisions;
    out.stats.agent_decisions += s.agent_decisions;
  }
  return out;
}

std::vector<Trajectory> generate_expert_data(const Scenario& scenario, std::uint64_t seed, int count,
                                             int threads) {
  const MpcProblem problem = scenario.problem;
  return run_batch(scenario, [problem] { return std::make_unique<CentralizedMpc>(problem); }, seed, count, threads)
      .trajectories;
}

Dataset extract_samples(const std::vector<Trajectory>& trajectories, Layout layout) {
  Dataset d;
  d.layout = layout;
  const int width = layout_width(layout);
  const int dim = layout_dim(layout);
  Eigen::Index total = 0;
  for (const auto& t : trajectories)
    for (const auto& s : t.snapshots)
      if (s.accel.size() > 0) total += s.state.size();
  d.features.resize(width, total);
  d.labels.resize(dim, total);
  d.trajectory.reserve(total);
  Eigen::Index col = 0;
  for (std::size_t ti = 0; ti < trajectories.size(); ++ti) {
    const auto& t = trajectories[ti];
    for (const auto& s : t.snapshots) {
      if (s.accel.size() == 0) continue;
      if (s.accel.rows() != dim) throw ConfigError("trajectory dimension does not match layout " + layout_name(layout));
      for (int i = 0; i < s.state.size(); ++i, ++col) {
        d.features.col(col) = encode_features(s.state, i, layout, t.meta.obstacles, t.meta.target);
        d.labels.col(col) = s.accel.col(i);
        d.trajectory.push_back(static_cast<int>(ti));
      }
    }
  }
  return d;
}

DatasetSplit split_by_trajectory(const Dataset& data, double holdout_fraction) {
  if (!(holdout_fraction >= 0 && holdout_fraction < 1)) throw ConfigError("holdout fraction must lie in [0, 1)");
  const std::set<int> ids(data.trajectory.begin(), data.trajectory.end());
  const auto held = static_cast<std::size_t>(std::ceil(holdout_fraction * static_cast<double>(ids.size()) - 1e-9));
  std::set<int> holdout_ids;
  // Never hold out everything.
  for (auto it = ids.rbegin(); it != ids.rend() && holdout_ids.size() < std::min(held, ids.size() - 1); ++it)
    holdout_ids.insert(*it);

  DatasetSplit out;
  std::vector<Eigen::Index> tr, ho;
  for (Eigen::Index c = 0; c < data.size(); ++c) (holdout_ids.count(data.trajectory[c]) ? ho : tr).push_back(c);
  auto take = [&](const std::vector<Eigen::Index>& cols, Dataset& d) {
    d.layout = data.layout;
    d.features = data.features(Eigen::all, cols);
    d.labels = data.labels(Eigen::all, cols);
    for (auto c : cols) d.trajectory.push_back(data.trajectory[c]);
  };
  take(tr, out.train);
  take(ho, out.holdout);
  return out;
}

double replay_error(const Trajectory& traj) {
  if (traj.snapshots.empty()) return 0.0;
  FlockState state = traj.snapshots.front().state;
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < traj.snapshots.size(); ++k) {
    const auto& accel = traj.snapshots[k].accel;
    if (accel.size() == 0) break;
    state = advance_control_step(state, accel, traj.meta.sim, traj.meta.predator);
    const auto& stored = traj.snapshots[k + 1].state;
    worst = std::max(worst, (state.positions() - stored.positions()).cwiseAbs().maxCoeff());
    worst = std::max(worst, (state.velocities() - stored.velocities()).cwiseAbs().maxCoeff());
    if (state.predator && stored.predator) {
      worst = std::max(worst, (state.predator->p - stored.predator->p).cwiseAbs().maxCoeff());
      worst = std::max(worst, (state.predator->v - stored.predator->v).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

int default_threads() {
  if (const char* env = std::getenv("FLOCKFORGE_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---- serialization ----

namespace {

json vec_json(const Vec& v) { return std::vector<double>(v.begin(), v.end()); }

// dim x n -> one array per column.
json cols_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(vec_json(m.col(c)));
  return a;
}

Vec json_vec(const json& j) {
  const auto xs = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

Matrix json_cols(const json& j) {
  if (!j.is_array()) throw ConfigError("expected an array of columns");
  if (j.empty()) return Matrix();
  const auto rows = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, static_cast<Eigen::Index>(j.size()));
  for (std::size_t c = 0; c < j.size(); ++c) {
    const Vec v = json_vec(j[c]);
    if (v.size() != rows) throw ConfigError("ragged column array");
    m.col(static_cast<Eigen::Index>(c)) = v;
  }
  return m;
}

json meta_json(const TrajectoryMeta& m, std::size_t snapshots) {
  json j;
  j["record"] = "meta";
  j["task"] = task_name(m.task);
  j["seed"] = m.seed;
  j["controller"] = m.controller;
  j["plant"] = m.plant;
  j["sim"] = {{"dt", m.sim.dt}, {"eta", m.sim.eta}, {"v_max", m.sim.v_max},
              {"a_max", m.sim.a_max}, {"dim", m.sim.dim}, {"sim_time", m.sim.sim_time}};
  j["predator"] = {{"f_p", m.predator.f_p}, {"d_start", m.predator.d_start}, {"bearing", vec_json(m.predator.bearing)}};
  json obs = json::array();
  for (const auto& o : m.obstacles) obs.push_back({{"center", vec_json(o.center)}, {"radius", o.radius}});
  j["obstacles"] = std::move(obs);
  j["target"] = m.target ? vec_json(*m.target) : json(nullptr);
  j["snapshots"] = snapshots;
  return j;
}

TrajectoryMeta parse_meta(const json& j) {
  TrajectoryMeta m;
  m.task = parse_task(j.at("task").get<std::string>());
  m.seed = j.at("seed").get<std::uint64_t>();
  m.controller = j.at("controller").get<std::string>();
  m.plant = j.at("plant").get<std::string>();
  const auto& s = j.at("sim");
  m.sim.dt = s.at("dt").get<double>();
  m.sim.eta = s.at("eta").get<int>();
  m.sim.v_max = s.at("v_max").get<double>();
  m.sim.a_max = s.at("a_max").get<double>();
  m.sim.dim = s.at("dim").get<int>();
  m.sim.sim_time = s.at("sim_time").get<double>();
  const auto& p = j.at("predator");
  m.predator.f_p = p.at("f_p").get<double>();
  m.predator.d_start = p.at("d_start").get<double>();
  m.predator.bearing = json_vec(p.at("bearing"));
  for (const auto& o : j.at("obstacles")) m.obstacles.push_back({json_vec(o.at("center")), o.at("radius").get<double>()});
  if (!j.at("target").is_null()) m.target = json_vec(j.at("target"));
  return m;
}

json snapshot_json(const Snapshot& s, std::size_t k) {
  json j;
  j["record"] = "state";
  j["k"] = k;
  j["time_step"] = s.state.time_step;
  j["p"] = cols_json(s.state.positions());
  j["v"] = cols_json(s.state.velocities());
  if (s.accel.size() > 0) j["a"] = cols_json(s.accel);
  if (s.state.predator) j["predator"] = {{"p", vec_json(s.state.predator->p)}, {"v", vec_json(s.state.predator->v)}};
  if (s.quad.size() > 0) j["quad"] = cols_json(s.quad);
  return j;
}

Snapshot parse_snapshot(const json& j) {
  Snapshot s;
  const Matrix P = json_cols(j.at("p"));
  const Matrix V = json_cols(j.at("v"));
  if (P.rows() != V.rows() || P.cols() != V.cols()) throw ConfigError("p and v shapes differ");
  for (Eigen::Index i = 0; i < P.cols(); ++i) s.state.agents.push_back({P.col(i), V.col(i)});
  s.state.time_step = j.at("time_step").get<int>();
  if (j.contains("a")) s.accel = json_cols(j.at("a"));
  if (j.contains("predator"))
    s.state.predator = AgentState{json_vec(j.at("predator").at("p")), json_vec(j.at("predator").at("v"))};
  if (j.contains("quad")) s.quad = json_cols(j.at("quad"));
  return s;
}

// Reads one JSON record per line, tracking the line number for errors.
class RecordReader {
 public:
  explicit RecordReader(std::istream& in) : in_(in) {}

  json next(const char* expecting) {
    std::string text;
    while (std::getline(in_, text)) {
      ++line_;
      if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        return json::parse(text);
      } catch (const json::exception& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), line_);
      }
    }
    throw ParseError(std::string("unexpected end of file, expected ") + expecting, line_ + 1);
  }

  bool at_end() {
    int c;
    while ((c = in_.peek()) != EOF && std::isspace(c)) {
      if (c == '\n') ++line_;
      in_.get();
    }
    return c == EOF;
  }

  long line() const { return line_; }

 private:
  std::istream& in_;
  long line_ = 0;
};

void check_header(const json& h, const char* format, long line) {
  if (!h.is_object() || !h.contains("schema_version")) throw ParseError("missing schema_version header", line);
  if (!h["schema_version"].is_number_integer() || h["schema_version"].get<int>() != kSchemaVersion)
    throw ParseError("unsupported schema_version " + h["schema_version"].dump() + " (expected " +
                         std::to_string(kSchemaVersion) + ")",
                     line);
  if (h.value("format", "") != format) throw ParseError(std::string("not a ") + format + " file", line);
}

template <class F>
auto with_line(long line, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError(e.what(), line);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), line);
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return in;
}

}  // namespace

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories) {
  out << json{{"schema_version", kSchemaVersion}, {"format", "flockforge.trajectories"},
              {"trajectories", trajectories.size()}}
             .dump()
      << '\n';
  for (const auto& t : trajectories) {
    out << meta_json(t.meta, t.snapshots.size()).dump() << '\n';
    for (std::size_t k = 0; k < t.snapshots.size(); ++k) out << snapshot_json(t.snapshots[k], k).dump() << '\n';
  }
}

std::vector<Trajectory> read_trajectories(std::istream& in) {
  RecordReader rd(in);
  const json header = rd.next("header");
  check_header(header, "flockforge.trajectories", rd.line());
  const auto count = with_line(rd.line(), [&] { return header.at("trajectories").get<std::size_t>(); });
  std::vector<Trajectory> out(count);
  for (auto& t : out) {
    const json m = rd.next("meta record");
    std::size_t snapshots = 0;
    with_line(rd.line(), [&] {
      if (m.value("record", "") != "meta") throw ConfigError("expected a meta record");
      t.meta = parse_meta(m);
      snapshots = m.at("snapshots").get<std::size_t>();
      return 0;
    });
    for (std::size_t k = 0; k < snapshots; ++k) {
      const json s = rd.next("state record");
      with_line(rd.line(), [&] {
        if (s.value("record", "") != "state") throw ConfigError("expected a state record");
        if (s.at("k").get<std::size_t>() != k) throw ConfigError("state records out of order");
        t.snapshots.push_back(parse_snapshot(s));
        return 0;
      });
    }
  }
  if (!rd.at_end()) throw ParseError("trailing records after the declared trajectories", rd.line() + 1);
  return out;
}

void save_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories) {
  auto out = open_out(path);
  write_trajectories(out, trajectories);
  if (!out) throw IoError("write failed: " + path);
}

std::vector<Trajectory> load_trajectories(const std::string& path) {
  auto in = open_in(path);
  return read_trajectories(in);
}

void write_dataset(std::ostream& out, const Dataset& data) {
  out << json{{"schema_version", kSchemaVersion}, {"format", "flockforge.dataset"},
              {"layout", layout_name(data.layout)}, {"samples", data.size()}}
             .dump()
      << '\n';
  for (Eigen::Index c = 0; c < data.size(); ++c) {
    out << json{{"traj", data.trajectory.empty() ? 0 : data.trajectory[c]},
                {"x", vec_json(data.features.col(c))},
                {"y", vec_json(data.labels.col(c))}}
               .dump()
        << '\n';
  }
}

Dataset read_dataset(std::istream& in) {
  RecordReader rd(in);
  const json header = rd.next("header");
  check_header(header, "flockforge.dataset", rd.line());
  Dataset d;
  Eigen::Index count = 0;
  with_line(rd.line(), [&] {
    d.layout = parse_layout(header.at("layout").get<std::string>());
    count = header.at("samples").get<Eigen::Index>();
    return 0;
  });
  d.features.resize(layout_width(d.layout), count);
  d.labels.resize(layout_dim(d.layout), count);
  d.trajectory.reserve(count);
  for (Eigen::Index c = 0; c < count; ++c) {
    const json r = rd.next("sample record");
    with_line(rd.line(), [&] {
      const Vec x = json_vec(r.at("x"));
      const Vec y = json_vec(r.at("y"));
      if (x.size() != d.features.rows() || y.size() != d.labels.rows())
        throw ConfigError("sample width does not match layout " + layout_name(d.layout));
      d.features.col(c) = x;
      d.labels.col(c) = y;
      d.trajectory.push_back(r.at("traj").get<int>());
      return 0;
    });
  }
  if (!rd.at_end()) throw ParseError("trailing records after the declared samples", rd.line() + 1);
  return d;
}

void save_dataset(const std::string& path, const Dataset& data) {
  auto out = open_out(path);
  write_dataset(out, data);
  if (!out) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  auto in = open_in(path);
  return read_dataset(in);
}

}  // namespace flockforge

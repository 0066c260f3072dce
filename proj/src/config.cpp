#include "flockforge/config.hpp"

#include <json.hpp>

#include <cmath>
#include <functional>

namespace flockforge {

using json = nlohmann::ordered_json;

namespace {

Vec vec_of(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Obstacle field between the starting box and the target; the flock drifts
// towards +x+y on average, so the target sits that way too.
void default_field(ExperimentConfig& c) {
  c.cost.target = vec_of({50.0, 50.0});
  c.cost.obstacles = {{vec_of({12.0, 22.0}), 2.0},
                      {vec_of({22.0, 12.0}), 2.0},
                      {vec_of({22.0, 30.0}), 2.0},
                      {vec_of({30.0, 22.0}), 2.0},
                      {vec_of({34.0, 34.0}), 2.0}};
}

ExperimentConfig base_2d() {
  ExperimentConfig c;
  c.adam.epochs = 2000;
  c.mpc.horizon = 5;
  c.mpc.lambda = 1.0;
  c.mpc.clearance_margin = 0.1;
  c.predator.bearing = vec_of({1.0, 0.0});
  default_field(c);
  return c;
}

ExperimentConfig base_3d() {
  ExperimentConfig c = base_2d();
  c.sim.dim = 3;
  c.sim.sim_time = 40.0;
  c.layout = Layout::BF36;
  c.arch = architecture_for(Layout::BF36);
  c.predator.bearing = vec_of({1.0, 0.0, 0.0});
  c.cost.target.reset();
  c.cost.obstacles.clear();
  return c;
}

std::string count_mode_name(CountMode m) { return m == CountMode::PerPair ? "per_pair" : "per_state"; }

CountMode parse_count_mode(const std::string& s) {
  if (s == "per_pair") return CountMode::PerPair;
  if (s == "per_state") return CountMode::PerState;
  throw ConfigError("unknown count mode '" + s + "'");
}

json vec_json(const Vec& v) { return std::vector<double>(v.begin(), v.end()); }

json to_json(const ExperimentConfig& c) {
  json obstacles = json::array();
  for (const auto& o : c.cost.obstacles) obstacles.push_back({{"center", vec_json(o.center)}, {"radius", o.radius}});
  const auto& q = c.quad.params;
  const auto& g = c.quad.gains;
  return {
      {"profile", c.profile},
      {"task", std::string(task_name(c.task))},
      {"agents", c.agents},
      {"neighbors", c.neighbors},
      {"sim",
       {{"dt", c.sim.dt},
        {"eta", c.sim.eta},
        {"v_max", c.sim.v_max},
        {"a_max", c.sim.a_max},
        {"dim", c.sim.dim},
        {"sim_time", c.sim.sim_time}}},
      {"mpc",
       {{"horizon", c.mpc.horizon},
        {"lambda", c.mpc.lambda},
        {"descent_iters", c.mpc.descent_iters},
        {"step_size", c.mpc.step_size},
        {"backtrack", c.mpc.backtrack},
        {"tol", c.mpc.tol},
        {"max_backtracks", c.mpc.max_backtracks},
        {"warm_start", c.mpc.warm_start},
        {"clearance_margin", c.mpc.clearance_margin}}},
      {"cost",
       {{"omega", c.cost.omega},
        {"omega_dmpc", c.omega_dmpc},
        {"rho", c.cost.rho},
        {"omega_t", c.cost.omega_t},
        {"d_min", c.cost.d_min},
        {"d_min_pred", c.cost.d_min_pred},
        {"r", c.cost.r},
        {"target", c.cost.target ? vec_json(*c.cost.target) : json(nullptr)},
        {"obstacles", obstacles}}},
      {"predator", {{"f_p", c.predator.f_p}, {"d_start", c.predator.d_start}, {"bearing", vec_json(c.predator.bearing)}}},
      {"init",
       {{"pos_lo", c.init.pos_lo},
        {"pos_hi", c.init.pos_hi},
        {"vel_lo", c.init.vel_lo},
        {"vel_hi", c.init.vel_hi},
        {"rejection_cap", c.init.rejection_cap}}},
      {"data",
       {{"trajectories", c.data.trajectories},
        {"seed", c.data.seed},
        {"holdout_fraction", c.data.holdout_fraction},
        {"layout", layout_name(c.layout)}}},
      {"train",
       {{"lr", c.adam.lr},
        {"beta1", c.adam.beta1},
        {"beta2", c.adam.beta2},
        {"epsilon", c.adam.epsilon},
        {"epochs", c.adam.epochs},
        {"batch_size", c.adam.batch_size},
        {"seed", c.adam.seed},
        {"standardize", c.standardize},
        {"hidden_layers", c.arch.hidden_layers},
        {"width", c.arch.width},
        {"activation", activation_name(c.arch.hidden)}}},
      {"eval", {{"runs", c.eval.runs}, {"seed", c.eval.seed}, {"count_mode", count_mode_name(c.eval.count_mode)}}},
      {"quad",
       {{"m", q.m},
        {"g", q.g},
        {"Ixx", q.Ixx},
        {"Iyy", q.Iyy},
        {"Izz", q.Izz},
        {"Jr", q.Jr},
        {"L", q.L},
        {"b", q.b},
        {"d", q.d},
        {"substeps", c.quad.substeps},
        {"gyroscopic", c.quad.gyroscopic},
        {"pid",
         {{"kp", g.kp},
          {"ki", g.ki},
          {"kd", g.kd},
          {"yaw_kp", g.yaw_kp},
          {"yaw_ki", g.yaw_ki},
          {"yaw_kd", g.yaw_kd},
          {"integral_limit", g.integral_limit},
          {"max_tilt", g.max_tilt},
          {"u1_max", g.u1_max}}}}},
  };
}

// Reads j[path] with the path in any error message.
class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  const json& node(const std::string& path) const {
    const json* j = &root_;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot - start);
      if (!j->is_object() || !j->contains(key)) throw ConfigError(path + ": missing");
      j = &(*j)[key];
      if (dot == std::string::npos) return *j;
      start = dot + 1;
    }
  }

  template <typename T>
  T get(const std::string& path) const {
    const json& j = node(path);
    try {
      if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) {
        if (!j.is_number_integer()) throw ConfigError("expected an integer");
        if constexpr (std::is_same_v<T, std::uint64_t>) {
          if (j.is_number_unsigned()) return j.get<std::uint64_t>();
          if (j.get<std::int64_t>() < 0) throw ConfigError("must be >= 0");
        }
      } else if constexpr (std::is_same_v<T, double>) {
        if (!j.is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) throw ConfigError("expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!j.is_string()) throw ConfigError("expected a string");
      }
      return j.get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  Vec vec(const std::string& path) const { return vec_at(node(path), path); }

  static Vec vec_at(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a non-empty array of numbers");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_number()) throw ConfigError(path + ": expected a non-empty array of numbers");
      v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
  }

 private:
  const json& root_;
};

template <typename F>
auto with_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind(path, 0) == 0) throw;
    throw ConfigError(path + ": " + what);
  }
}

ExperimentConfig from_json(const json& j) {
  const Reader r(j);
  ExperimentConfig c;
  c.profile = r.get<std::string>("profile");
  c.task = with_path("task", [&] { return parse_task(r.get<std::string>("task")); });
  c.agents = r.get<int>("agents");
  c.neighbors = r.get<int>("neighbors");

  c.sim.dt = r.get<double>("sim.dt");
  c.sim.eta = r.get<int>("sim.eta");
  c.sim.v_max = r.get<double>("sim.v_max");
  c.sim.a_max = r.get<double>("sim.a_max");
  c.sim.dim = r.get<int>("sim.dim");
  c.sim.sim_time = r.get<double>("sim.sim_time");

  c.mpc.horizon = r.get<int>("mpc.horizon");
  c.mpc.lambda = r.get<double>("mpc.lambda");
  c.mpc.descent_iters = r.get<int>("mpc.descent_iters");
  c.mpc.step_size = r.get<double>("mpc.step_size");
  c.mpc.backtrack = r.get<double>("mpc.backtrack");
  c.mpc.tol = r.get<double>("mpc.tol");
  c.mpc.max_backtracks = r.get<int>("mpc.max_backtracks");
  c.mpc.warm_start = r.get<bool>("mpc.warm_start");
  c.mpc.clearance_margin = r.get<double>("mpc.clearance_margin");

  c.cost.task = c.task;
  c.cost.omega = r.get<double>("cost.omega");
  c.omega_dmpc = r.get<double>("cost.omega_dmpc");
  c.cost.rho = r.get<double>("cost.rho");
  c.cost.omega_t = r.get<double>("cost.omega_t");
  c.cost.d_min = r.get<double>("cost.d_min");
  c.cost.d_min_pred = r.get<double>("cost.d_min_pred");
  c.cost.r = r.get<double>("cost.r");
  if (!r.node("cost.target").is_null()) c.cost.target = r.vec("cost.target");
  const json& obs = r.node("cost.obstacles");
  if (!obs.is_array()) throw ConfigError("cost.obstacles: expected an array");
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const std::string p = "cost.obstacles[" + std::to_string(i) + "]";
    const Reader o(obs[i]);
    Obstacle ob;
    ob.center = with_path(p, [&] { return o.vec("center"); });
    ob.radius = with_path(p, [&] { return o.get<double>("radius"); });
    c.cost.obstacles.push_back(ob);
  }

  c.predator.f_p = r.get<double>("predator.f_p");
  c.predator.d_start = r.get<double>("predator.d_start");
  c.predator.bearing = r.vec("predator.bearing");

  c.init.pos_lo = r.get<double>("init.pos_lo");
  c.init.pos_hi = r.get<double>("init.pos_hi");
  c.init.vel_lo = r.get<double>("init.vel_lo");
  c.init.vel_hi = r.get<double>("init.vel_hi");
  c.init.rejection_cap = r.get<int>("init.rejection_cap");

  c.data.trajectories = r.get<int>("data.trajectories");
  c.data.seed = r.get<std::uint64_t>("data.seed");
  c.data.holdout_fraction = r.get<double>("data.holdout_fraction");
  c.layout = with_path("data.layout", [&] { return parse_layout(r.get<std::string>("data.layout")); });

  c.adam.lr = r.get<double>("train.lr");
  c.adam.beta1 = r.get<double>("train.beta1");
  c.adam.beta2 = r.get<double>("train.beta2");
  c.adam.epsilon = r.get<double>("train.epsilon");
  c.adam.epochs = r.get<int>("train.epochs");
  c.adam.batch_size = r.get<int>("train.batch_size");
  c.adam.seed = r.get<std::uint64_t>("train.seed");
  c.standardize = r.get<bool>("train.standardize");
  c.arch.hidden_layers = r.get<int>("train.hidden_layers");
  c.arch.width = r.get<int>("train.width");
  c.arch.hidden = with_path("train.activation", [&] { return parse_activation(r.get<std::string>("train.activation")); });

  c.eval.runs = r.get<int>("eval.runs");
  c.eval.seed = r.get<std::uint64_t>("eval.seed");
  c.eval.count_mode = with_path("eval.count_mode", [&] { return parse_count_mode(r.get<std::string>("eval.count_mode")); });

  auto& q = c.quad.params;
  q.m = r.get<double>("quad.m");
  q.g = r.get<double>("quad.g");
  q.Ixx = r.get<double>("quad.Ixx");
  q.Iyy = r.get<double>("quad.Iyy");
  q.Izz = r.get<double>("quad.Izz");
  q.Jr = r.get<double>("quad.Jr");
  q.L = r.get<double>("quad.L");
  q.b = r.get<double>("quad.b");
  q.d = r.get<double>("quad.d");
  c.quad.substeps = r.get<int>("quad.substeps");
  c.quad.gyroscopic = r.get<bool>("quad.gyroscopic");
  auto& g = c.quad.gains;
  g.kp = r.get<double>("quad.pid.kp");
  g.ki = r.get<double>("quad.pid.ki");
  g.kd = r.get<double>("quad.pid.kd");
  g.yaw_kp = r.get<double>("quad.pid.yaw_kp");
  g.yaw_ki = r.get<double>("quad.pid.yaw_ki");
  g.yaw_kd = r.get<double>("quad.pid.yaw_kd");
  g.integral_limit = r.get<double>("quad.pid.integral_limit");
  g.max_tilt = r.get<double>("quad.pid.max_tilt");
  g.u1_max = r.get<double>("quad.pid.u1_max");
  return c;
}

// Keys of `user` must exist in `schema`; arrays and nullable values are leaves.
void check_keys(const json& user, const json& schema, const std::string& prefix) {
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ConfigError(path + ": unknown key");
    if (value.is_object()) {
      if (!schema[key].is_object()) throw ConfigError(path + ": expected a value, not an object");
      check_keys(value, schema[key], path);
    }
  }
}

// Like merge_patch, but null is a value (it clears cost.target) rather than a deletion.
void overlay(json& base, const json& user) {
  for (const auto& [key, value] : user.items()) {
    if (value.is_object() && base[key].is_object()) {
      overlay(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

void set_path(json& root, const std::string& path, const json& value) {
  json* j = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("override '" + path + "': empty key");
    if (dot == std::string::npos) {
      (*j)[key] = value;
      return;
    }
    j = &(*j)[key];
    start = dot + 1;
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

template <typename F>
void section(const std::string& name, F&& f) {
  with_path(name, [&] {
    f();
    return 0;
  });
}

}  // namespace

const std::vector<std::string>& profile_names() {
  static const std::vector<std::string> names = {"desk2d", "paper2d", "desk3d", "paper3d"};
  return names;
}

ExperimentConfig profile_config(const std::string& name) {
  ExperimentConfig c;
  if (name == "desk2d") {
    c = base_2d();
  } else if (name == "paper2d") {
    c = base_2d();
    c.agents = 30;
    c.data.trajectories = 100;
    c.adam.epochs = 10000;
    c.eval.runs = 100;
  } else if (name == "desk3d") {
    c = base_3d();
    c.agents = 8;
    c.data.trajectories = 20;
    c.adam.epochs = 2000;
    c.eval.runs = 5;
  } else if (name == "paper3d") {
    c = base_3d();
    c.agents = 20;
    c.data.trajectories = 400;
    c.adam.epochs = 10000;
    c.eval.runs = 100;
  } else {
    throw ConfigError("profile: unknown profile '" + name + "'");
  }
  c.profile = name;
  return c;
}

void ExperimentConfig::validate() const {
  section("sim", [&] { sim.validate(); });
  section("mpc", [&] { mpc.validate(); });
  section("cost", [&] { centralized_problem().cost.validate(); });
  section("train", [&] { adam.validate(); });
  section("quad", [&] { quad.validate(); });
  require(cost.task == task, "cost: task mismatch");
  require(agents >= 2, "agents: must be >= 2");
  require(neighbors >= 1 && neighbors < agents, "neighbors: must lie in [1, agents)");
  require(agents > kLayoutNeighbors, "agents: the network inputs need at least " +
                                         std::to_string(kLayoutNeighbors + 1) + " agents");
  require(omega_dmpc >= 0, "cost.omega_dmpc: must be >= 0");
  require(init.pos_lo < init.pos_hi, "init: pos_lo must be < pos_hi");
  require(init.vel_lo <= init.vel_hi, "init: vel_lo must be <= vel_hi");
  require(init.rejection_cap >= 1, "init.rejection_cap: must be >= 1");
  require(data.trajectories >= 1, "data.trajectories: must be >= 1");
  require(data.holdout_fraction >= 0 && data.holdout_fraction < 1, "data.holdout_fraction: must lie in [0, 1)");
  require(arch.hidden_layers >= 1 && arch.width >= 1, "train: hidden_layers and width must be >= 1");
  require(eval.runs >= 1, "eval.runs: must be >= 1");

  // Cross-field consistency.
  require(sim.dim == 2 || task == Task::BasicFlocking, "task: only basic_flocking runs in 3D");
  const Layout expected = layout_for(task, sim.dim);
  require(layout == expected, "data.layout: task " + std::string(task_name(task)) + " in " +
                                  std::to_string(sim.dim) + "D uses " + layout_name(expected) + ", not " +
                                  layout_name(layout));
  if (task == Task::ObstacleTarget) {
    require(cost.target.has_value(), "cost.target: required by obstacle_target");
    require(!cost.obstacles.empty(), "cost.obstacles: required by obstacle_target");
  }
  if (cost.target) require(cost.target->size() == sim.dim, "cost.target: dimension must match sim.dim");
  for (const auto& o : cost.obstacles) {
    require(o.center.size() == sim.dim, "cost.obstacles: center dimension must match sim.dim");
    require(o.radius > 0, "cost.obstacles: radius must be > 0");
  }
  if (task == Task::PredatorAvoidance) {
    section("predator", [&] { predator.validate(); });
    require(predator.bearing.size() == sim.dim && predator.bearing.norm() > 0,
            "predator.bearing: nonzero vector of dimension sim.dim required");
  }
}

MpcProblem ExperimentConfig::centralized_problem() const {
  MpcProblem p;
  p.cost = cost;
  p.cost.task = task;
  // The field only exists for the task that uses it.
  if (task != Task::ObstacleTarget) {
    p.cost.obstacles.clear();
    p.cost.target.reset();
  }
  p.mpc = mpc;
  p.sim = sim;
  p.predator = predator;
  return p;
}

MpcProblem ExperimentConfig::distributed_problem() const {
  MpcProblem p = centralized_problem();
  p.cost.omega = omega_dmpc;
  return p;
}

Scenario ExperimentConfig::scenario() const {
  Scenario s;
  s.problem = centralized_problem();
  s.agents = agents;
  s.box = init;
  s.quad = quad;
  return s;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.adam = adam;
  t.arch = arch;
  t.standardize = standardize;
  return t;
}

std::string config_json(const ExperimentConfig& config) { return to_json(config).dump(2); }

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");

  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "': expected key=value");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    set_path(user, key, value);
  }

  std::string profile = "desk2d";
  if (user.contains("profile")) {
    if (!user["profile"].is_string()) throw ConfigError("profile: expected a string");
    profile = user["profile"].get<std::string>();
  }
  json merged = to_json(profile_config(profile));
  check_keys(user, merged, "");
  overlay(merged, user);
  ExperimentConfig c = from_json(merged);
  c.validate();
  return c;
}

}  // namespace flockforge

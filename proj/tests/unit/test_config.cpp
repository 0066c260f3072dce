#include <doctest.h>

#include <string>

#include "flockforge/config.hpp"
#include "flockforge/experiment.hpp"

using namespace flockforge;

namespace {

std::string error_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_config(text, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TEST_CASE("profiles carry the published settings") {
  for (const auto& name : profile_names()) {
    CAPTURE(name);
    const ExperimentConfig c = profile_config(name);
    CHECK_NOTHROW(c.validate());
    CHECK(c.profile == name);
    CHECK(c.sim.dt == 0.1);
    CHECK(c.sim.eta == 3);
    CHECK(c.sim.v_max == 2.0);
    CHECK(c.sim.a_max == 1.5);
    CHECK(c.cost.omega == 2000.0);
    CHECK(c.omega_dmpc == 30.0);
    CHECK(c.cost.rho == 1e5);
    CHECK(c.cost.d_min == 2.0);
    CHECK(c.cost.d_min_pred == 4.0);
    CHECK(c.adam.lr == 1e-4);
    CHECK(c.adam.beta1 == 0.9);
    CHECK(c.adam.beta2 == 0.999);
    CHECK(c.adam.epsilon == 1e-8);
    CHECK(c.adam.batch_size == 500);
    CHECK(c.neighbors == 5);
    CHECK(c.init.pos_lo == -15.0);
    CHECK(c.init.pos_hi == 15.0);
    CHECK(c.init.vel_lo == 0.0);
    CHECK(c.init.vel_hi == 1.0);
  }
  const auto p2 = profile_config("paper2d");
  CHECK(p2.agents == 30);
  CHECK(p2.data.trajectories == 100);
  CHECK(p2.adam.epochs == 10000);
  CHECK(p2.sim.sim_time == 100.0);
  CHECK(p2.cost.obstacles.size() == 5);
  const auto d3 = profile_config("desk3d");
  CHECK(d3.sim.dim == 3);
  CHECK(d3.layout == Layout::BF36);
  CHECK(d3.arch.width == 84);
  CHECK(d3.arch.hidden == Activation::Relu);
  CHECK(profile_config("paper3d").agents == 20);
  CHECK(profile_config("desk2d").agents == 10);
  CHECK_THROWS_AS(profile_config("lab9d"), ConfigError);
}

TEST_CASE("config JSON round trip") {
  for (const auto& name : profile_names()) {
    const ExperimentConfig c = profile_config(name);
    const std::string text = config_json(c);
    CHECK(config_json(parse_config(text)) == text);
  }
}

TEST_CASE("empty object resolves to desk2d") {
  CHECK(config_json(parse_config("{}")) == config_json(profile_config("desk2d")));
}

TEST_CASE("user keys and overrides overlay the profile") {
  const auto c = parse_config(R"({"profile":"paper2d","agents":12,"mpc":{"horizon":4}})",
                              {"train.epochs=7", "task=collision_avoidance", "data.layout=CA24", "eval.count_mode=per_state"});
  CHECK(c.agents == 12);
  CHECK(c.mpc.horizon == 4);
  CHECK(c.mpc.lambda == 1.0);  // siblings keep the preset
  CHECK(c.adam.epochs == 7);
  CHECK(c.task == Task::CollisionAvoidance);
  CHECK(c.cost.task == Task::CollisionAvoidance);
  CHECK(c.eval.count_mode == CountMode::PerState);
}

TEST_CASE("config errors name the key") {
  CHECK(starts_with(error_of(R"({"mpc":{"horizn":3}})"), "mpc.horizn"));
  CHECK(starts_with(error_of(R"({"agents":"ten"})"), "agents"));
  CHECK(starts_with(error_of(R"({"sim":{"eta":1.5}})"), "sim.eta"));
  CHECK(starts_with(error_of(R"({"task":"herding"})"), "task"));
  CHECK(starts_with(error_of(R"({"data":{"seed":-1}})"), "data.seed"));
  CHECK(starts_with(error_of(R"({"profile":"nope"})"), "profile"));
  CHECK(starts_with(error_of(R"({"cost":{"obstacles":[{"center":[1],"radius":1}]}})"), "cost.obstacles"));
  CHECK(starts_with(error_of("{}", {"train.lr=-1"}), "train"));
  CHECK(starts_with(error_of("{}", {"noequals"}), "override"));
  CHECK(!error_of("[1,2]").empty());
  CHECK(!error_of("{not json").empty());
}

TEST_CASE("task, layout and dimension must agree") {
  CHECK(starts_with(error_of("{}", {"data.layout=OA38"}), "data.layout"));
  CHECK(starts_with(error_of("{}", {"task=obstacle_target"}), "data.layout"));
  CHECK_NOTHROW(parse_config("{}", {"task=obstacle_target", "data.layout=OA38"}));
  CHECK(starts_with(error_of("{}", {"task=obstacle_target", "data.layout=OA38", "cost.target=null"}), "cost"));
  CHECK(starts_with(error_of("{}", {"task=obstacle_target", "data.layout=OA38", "cost.obstacles=[]"}),
                    "cost.obstacles"));
  CHECK(starts_with(error_of(R"({"profile":"desk3d"})", {"task=predator_avoidance", "data.layout=PA28"}), "task"));
  CHECK(starts_with(error_of("{}", {"agents=5", "neighbors=3"}), "agents"));
  CHECK(starts_with(error_of("{}", {"task=predator_avoidance", "data.layout=PA28", "predator.bearing=[0,0]"}),
                    "predator.bearing"));
}

TEST_CASE("obstacle field only reaches the obstacle task") {
  const auto bf = parse_config("{}");
  CHECK(bf.scenario().problem.cost.obstacles.empty());
  CHECK(!bf.scenario().problem.cost.target);
  const auto oa = parse_config("{}", {"task=obstacle_target", "data.layout=OA38"});
  CHECK(oa.scenario().problem.cost.obstacles.size() == 5);
  CHECK(oa.scenario().problem.cost.target.has_value());
  CHECK(oa.distributed_problem().cost.omega == 30.0);
  CHECK(oa.centralized_problem().cost.omega == 2000.0);
}

TEST_CASE("second-half helpers") {
  CHECK(late_mean_abs({}) == 0.0);
  CHECK(late_mean_abs({100.0, -1.0, 3.0}) == doctest::Approx(2.0));
  MetricSeries a, b;
  a.diameter = {9, 9, 2, 4};
  b.diameter = {0, 6};
  CHECK(late_mean_diameter({a, b}) == doctest::Approx(4.0));
}

TEST_CASE("quad comparison") {
  ExperimentConfig c = profile_config("desk3d");
  c.sim.sim_time = 2.0;
  c.eval.runs = 2;
  const Mlp net = make_mlp(36, 3, c.arch, 1);

  const QuadComparison q = run_quad_comparison(c, net);
  const int steps = c.sim.control_steps() + 1;
  CHECK(q.dnc_point.trajectories.size() == 2);
  CHECK(q.cmpc_quad.trajectories.front().meta.plant == "quad");
  CHECK(static_cast<int>(q.dnc_dD.delta.size()) == steps);
  CHECK(static_cast<int>(q.cmpc_dVC.delta.size()) == steps);
  // Shared initial states: no gap before the first action.
  CHECK(q.dnc_dD.delta.front() == 0.0);
  CHECK(q.cmpc_dD.delta.front() == 0.0);
  CHECK(q.dnc_point.trajectories[1].snapshots.front().state.positions() ==
        q.cmpc_quad.trajectories[1].snapshots.front().state.positions());

  CHECK_THROWS_AS(run_quad_comparison(profile_config("desk2d"), net), ConfigError);
  CHECK_THROWS_AS(run_quad_comparison(c, make_mlp(24, 2, c.arch, 1)), ConfigError);
}

TEST_CASE("evaluation over a trajectory set") {
  ExperimentConfig c = profile_config("desk2d");
  c.sim.sim_time = 2.0;
  const auto problem = c.centralized_problem();
  const BatchResult b = run_batch(c.scenario(), [&] { return std::make_unique<CentralizedMpc>(problem); }, 3, 2);
  const EvalReport r = evaluate_trajectories(b.trajectories, 2.0, 4.0);
  CHECK(r.controller == "cmpc");
  CHECK(r.task == "basic_flocking");
  CHECK(r.converged.runs == 2);
  CHECK(r.collisions.states == 2 * (c.sim.control_steps() + 1));
  CHECK_THROWS_AS(evaluate_trajectories({}, 2.0, 4.0), ConfigError);
}

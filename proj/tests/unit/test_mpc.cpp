#include <doctest.h>

#include <cmath>

#include "flockforge/mpc.hpp"

using namespace flockforge;

namespace {

Vec v2(double x, double y) { return (Vec(2) << x, y).finished(); }

FlockState make_flock(std::initializer_list<std::pair<Vec, Vec>> agents) {
  FlockState f;
  for (const auto& [p, v] : agents) f.agents.push_back({p, v});
  return f;
}

MpcProblem basic_problem(int horizon = 3, int eta = 3) {
  MpcProblem pr;
  pr.cost.task = Task::BasicFlocking;
  pr.cost.omega = 30;
  pr.cost.r = 10;
  pr.mpc.horizon = horizon;
  pr.mpc.lambda = 0.5;
  pr.sim.eta = eta;
  return pr;
}

FlockState random_flock(Rng& rng, int n, double half, double speed) {
  FlockState f;
  for (int i = 0; i < n; ++i) {
    f.agents.push_back({v2(rng.uniform(-half, half), rng.uniform(-half, half)),
                        v2(rng.uniform(-speed, speed), rng.uniform(-speed, speed))});
  }
  return f;
}

ControlPlan random_plan(Rng& rng, int horizon, int agents, double bound) {
  auto plan = ControlPlan::zeros(horizon, 2, agents);
  for (auto& a : plan.steps)
    for (Eigen::Index k = 0; k < a.size(); ++k) a(k) = rng.uniform(-bound, bound);
  return plan;
}

double plan_fd_error(const ControlPlan& analytic, const std::function<double(const ControlPlan&)>& cost,
                     const ControlPlan& at) {
  double err = 0.0, scale = 0.0;
  ControlPlan probe = at;
  for (std::size_t t = 0; t < at.steps.size(); ++t) {
    for (Eigen::Index k = 0; k < at.steps[t].size(); ++k) {
      const double x = at.steps[t](k);
      probe.steps[t](k) = x + 1e-6;
      const double up = cost(probe);
      probe.steps[t](k) = x - 1e-6;
      const double down = cost(probe);
      probe.steps[t](k) = x;
      const double fd = (up - down) / 2e-6;
      err += std::pow(fd - analytic.steps[t](k), 2);
      scale += fd * fd;
    }
  }
  return std::sqrt(err) / std::max(std::sqrt(scale), 1e-8);
}

}  // namespace

TEST_CASE("rollout with zero plan is the drifted task cost") {
  auto pr = basic_problem(1, 1);
  const auto f = make_flock({{v2(0, 0), v2(1, 0)}, {v2(4, 0), v2(0, 1)}});
  const double cost = rollout_cost(f, ControlPlan::zeros(1, 2, 2), pr);
  Matrix drifted(2, 2);
  drifted << 0.1, 4, 0, 0.1;
  CHECK(cost == doctest::Approx(task_cost(drifted, pr.cost).total));
}

TEST_CASE("rollout effort term is lambda |a|^2") {
  auto pr = basic_problem(1, 1);
  pr.mpc.lambda = 2;
  const auto f = make_flock({{v2(0, 0), v2(0, 0)}, {v2(4, 0), v2(0, 0)}});
  auto plan = ControlPlan::zeros(1, 2, 2);
  const double base = rollout_cost(f, plan, pr);
  plan.steps[0].col(1) = v2(0.6, 0.8);
  // With eta = 1 the first position update does not see the acceleration.
  CHECK(rollout_cost(f, plan, pr) - base == doctest::Approx(2.0));
}

TEST_CASE("two-step rollout equals a manual unroll") {
  auto pr = basic_problem(2, 3);
  pr.mpc.lambda = 0.3;
  const auto f = make_flock({{v2(0, 0), v2(0.5, 0)}, {v2(3, 1), v2(0, -0.2)}});
  auto plan = ControlPlan::zeros(2, 2, 2);
  plan.steps[0] << 1.0, -0.5, 0.2, 0.3;
  plan.steps[1] << -0.4, 0.0, 0.9, -1.0;

  FlockState s = f;
  double expected = 0.0;
  for (int t = 0; t < 2; ++t) {
    for (int k = 0; k < 3; ++k)
      for (int i = 0; i < 2; ++i) s.agents[i] = step_agent(s.agents[i], plan.steps[t].col(i), pr.sim);
    expected += task_cost(s.positions(), pr.cost).total + 0.3 * plan.steps[t].squaredNorm();
  }
  CHECK(rollout_cost(f, plan, pr) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adjoint rollout gradient matches finite differences") {
  Rng rng(17);
  for (Task task : {Task::BasicFlocking, Task::CollisionAvoidance, Task::ObstacleTarget,
                    Task::PredatorAvoidance}) {
    CAPTURE(task_name(task));
    auto pr = basic_problem(3, 3);
    pr.cost.task = task;
    pr.cost.rho = 50;  // keeps finite differences well conditioned
    if (task == Task::ObstacleTarget) {
      pr.cost.target = v2(5, 5);
      pr.cost.obstacles = {{v2(1, 1), 1.0}};
    }
    for (int trial = 0; trial < 15; ++trial) {
      FlockState f = random_flock(rng, 4, 3.0, 1.9);
      if (task == Task::PredatorAvoidance) f.predator = AgentState{v2(4, 0), v2(-1, 0.5)};
      // Large accelerations push some velocities through the clamp.
      const auto plan = random_plan(rng, 3, 4, 1.5);
      const auto g = rollout_cost_gradient(f, plan, pr);
      CHECK(g.cost == doctest::Approx(rollout_cost(f, plan, pr)));
      auto cost = [&](const ControlPlan& p) { return rollout_cost(f, p, pr); };
      CHECK(plan_fd_error(g.gradient, cost, plan) < 1e-5);
    }
  }
}

TEST_CASE("clearance margin widens only the planner's penalty") {
  auto pr = basic_problem(1, 1);
  pr.cost.task = Task::CollisionAvoidance;
  pr.cost.rho = 100;
  pr.mpc.lambda = 0;
  // Static pair 2.05 apart: clear of d_min, inside d_min + 0.1.
  const auto f = make_flock({{v2(0, 0), v2(0, 0)}, {v2(2.05, 0), v2(0, 0)}});
  const auto plan = ControlPlan::zeros(1, 2, 2);
  const double cohesion = 2.05 * 2.05;
  CHECK(rollout_cost(f, plan, pr) == doctest::Approx(cohesion));
  pr.mpc.clearance_margin = 0.1;
  CHECK(rollout_cost(f, plan, pr) == doctest::Approx(cohesion + 100 * 0.05));

  Rng rng(4);
  const auto wide = random_plan(rng, 1, 2, 1.0);
  const auto g = rollout_cost_gradient(f, wide, pr);
  auto cost = [&](const ControlPlan& p) { return rollout_cost(f, p, pr); };
  CHECK(plan_fd_error(g.gradient, cost, wide) < 1e-5);

  // The local rollout sees the same widened clearance.
  const auto own = ControlPlan::zeros(1, 2, 1);
  CHECK(local_rollout_cost(f, 0, {1}, own, pr) == doctest::Approx(cohesion + 100 * 0.05));
}

TEST_CASE("local rollout gradient matches finite differences") {
  Rng rng(23);
  for (Task task : {Task::BasicFlocking, Task::CollisionAvoidance, Task::PredatorAvoidance}) {
    auto pr = basic_problem(3, 3);
    pr.cost.task = task;
    pr.cost.rho = 50;
    for (int trial = 0; trial < 15; ++trial) {
      FlockState f = random_flock(rng, 5, 3.0, 1.9);
      if (task == Task::PredatorAvoidance) f.predator = AgentState{v2(2, 0), v2(-1, 0)};
      const auto nbrs = nearest_neighbors(f, 0, 3);
      const auto plan = random_plan(rng, 3, 1, 1.5);
      const auto g = local_rollout_cost_gradient(f, 0, nbrs, plan, pr);
      auto cost = [&](const ControlPlan& p) { return local_rollout_cost(f, 0, nbrs, p, pr); };
      CHECK(plan_fd_error(g.gradient, cost, plan) < 1e-5);
    }
  }
}

TEST_CASE("local rollout treats neighbours as coasting") {
  auto pr = basic_problem(3, 3);
  pr.mpc.lambda = 0;
  const auto f = make_flock({{v2(0, 0), v2(0, 0)}, {v2(5, 0), v2(0.3, -0.4)}});
  const double cost = local_rollout_cost(f, 0, {1}, ControlPlan::zeros(3, 2, 1), pr);
  double expected = 0.0;
  for (int t = 1; t <= 3; ++t) {
    Matrix q(2, 1);
    q.col(0) = f.agents[1].p + t * pr.sim.eta * pr.sim.dt * f.agents[1].v;
    expected += local_task_cost(v2(0, 0), q, pr.cost).value;
  }
  CHECK(cost == doctest::Approx(expected));
}

TEST_CASE("centralized solve pulls distant agents together") {
  auto pr = basic_problem();
  const auto f = make_flock({{v2(-20, 0), v2(0, 0)}, {v2(20, 0), v2(0, 0)}});
  const Matrix a = solve_centralized(f, pr);
  CHECK(a(0, 0) > 0.1);
  CHECK(a(0, 1) < -0.1);
  CHECK(a.col(0).norm() <= pr.sim.a_max + 1e-12);
  // Sign agrees with the analytic gradient of the single-step cost.
  const Matrix g = task_cost_gradient(f.positions(), pr.cost).positions;
  CHECK(a.col(0).dot(g.col(0)) < 0);
}

TEST_CASE("centralized solve at a J1 stationary point is near zero") {
  auto pr = basic_problem();
  pr.cost.omega = 16;  // |p|^4 = omega for two agents gives |p| = 2
  const auto f = make_flock({{v2(0, 0), v2(0, 0)}, {v2(2, 0), v2(0, 0)}});
  const auto r = solve_centralized_plan(f, pr);
  CHECK(r.plan.steps[0].norm() < 1e-6);
}

TEST_CASE("centralized solve never ends above the zero plan") {
  Rng rng(31);
  auto pr = basic_problem();
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = random_flock(rng, 6, 8.0, 1.0);
    const auto r = solve_centralized_plan(f, pr);
    CHECK(r.cost <= r.zero_plan_cost);
    for (const auto& a : r.plan.steps)
      for (Eigen::Index i = 0; i < a.cols(); ++i) CHECK(a.col(i).norm() <= pr.sim.a_max + 1e-12);
  }
}

TEST_CASE("finite-difference debug mode agrees with the adjoint solve") {
  Rng rng(37);
  auto pr = basic_problem();
  const auto f = random_flock(rng, 4, 6.0, 1.0);
  const auto adj = solve_centralized_plan(f, pr);
  pr.mpc.gradient = GradientMode::FiniteDifference;
  const auto fd = solve_centralized_plan(f, pr);
  CHECK(fd.cost == doctest::Approx(adj.cost).epsilon(1e-4));
}

TEST_CASE("distributed solve moves toward a distant stationary neighbour") {
  auto pr = basic_problem();
  const auto f = make_flock({{v2(0, 0), v2(0, 0)}, {v2(30, 0), v2(0, 0)}});
  const Vec a = solve_distributed(f, 0, 1, pr);
  CHECK(a(0) > 0.1);
  CHECK(std::abs(a(1)) < 1e-9);
}

TEST_CASE("distributed solve at the J^D stationary distance is near zero") {
  auto pr = basic_problem();
  pr.cost.omega = 81;  // x^2 + omega / x^2 is stationary at x = omega^(1/4) = 3
  const auto f = make_flock({{v2(0, 0), v2(0, 0)}, {v2(3, 0), v2(0, 0)}});
  CHECK(solve_distributed(f, 0, 1, pr).norm() < 1e-6);
}

TEST_CASE("distributed and centralized first actions agree in direction for symmetric pairs") {
  Rng rng(41);
  auto pr = basic_problem();
  int agree = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec half = v2(rng.uniform(-10, 10), rng.uniform(-10, 10));
    const Vec vel = v2(rng.uniform(-1, 1), rng.uniform(-1, 1));
    const auto f = make_flock({{half, vel}, {-half, -vel}});
    const Matrix central = solve_centralized(f, pr);
    const Vec local = solve_distributed(f, 0, 1, pr);
    if (central.col(0).dot(local) > 0) ++agree;
  }
  CHECK(agree == 50);
}

TEST_CASE("control_loop schedule, drift and determinism") {
  SimParams sim;
  sim.sim_time = 100;
  const auto initial = sample_initial_flock(5, 3, sim, 2.0);
  ZeroController zero;
  const auto traj = control_loop(initial, zero, sim, PredatorParams{});
  CHECK(traj.snapshots.size() == 334);
  CHECK(traj.actions() == 333);
  CHECK(traj.snapshots.back().state.velocities() == initial.velocities());
  CHECK(traj.snapshots.back().state.time_step == 999);

  sim.sim_time = 6;
  auto pr = basic_problem();
  CentralizedMpc a(pr), b(pr);
  const auto ta = control_loop(initial, a, sim, PredatorParams{});
  const auto tb = control_loop(initial, b, sim, PredatorParams{});
  REQUIRE(ta.snapshots.size() == tb.snapshots.size());
  for (std::size_t k = 0; k < ta.snapshots.size(); ++k)
    CHECK(ta.snapshots[k].state.positions() == tb.snapshots[k].state.positions());
}

TEST_CASE("control_loop moves the predator with its pursuit law") {
  SimParams sim;
  sim.sim_time = 3;
  PredatorParams pp;
  FlockState f = make_flock({{v2(0, 0), v2(0, 0)}, {v2(2, 0), v2(0, 0)}});
  f.predator = place_predator(f, pp);
  ZeroController zero;
  const auto traj = control_loop(f, zero, sim, pp);
  const auto& last = traj.snapshots.back().state;
  CHECK(last.predator->p(0) < f.predator->p(0));
  CHECK(last.predator->v.norm() <= pp.f_p * sim.v_max + 1e-12);
}

TEST_CASE("warm start never does worse than the cold solve bound") {
  Rng rng(3);
  auto pr = basic_problem();
  pr.mpc.warm_start = true;
  SimParams sim = pr.sim;
  sim.sim_time = 3;
  CentralizedMpc ctl(pr);
  const auto traj = control_loop(random_flock(rng, 5, 8.0, 1.0), ctl, sim, PredatorParams{});
  CHECK(traj.actions() == 10);
}

TEST_CASE("T=1, eta=3 solve matches a brute-force grid over both agents") {
  auto pr = basic_problem(1, 3);
  pr.mpc.lambda = 0.2;
  pr.sim.a_max = 1.0;
  const auto f = make_flock({{v2(-3, 0.5), v2(0.2, 0)}, {v2(3, -0.5), v2(-0.1, 0.3)}});
  const auto r = solve_centralized_plan(f, pr);

  const double step = 0.1;
  double best = 1e300;
  auto plan = ControlPlan::zeros(1, 2, 2);
  for (double ax = -1; ax <= 1 + 1e-9; ax += step)
    for (double ay = -1; ay <= 1 + 1e-9; ay += step)
      for (double bx = -1; bx <= 1 + 1e-9; bx += step)
        for (double by = -1; by <= 1 + 1e-9; by += step) {
          if (ax * ax + ay * ay > 1 + 1e-12 || bx * bx + by * by > 1 + 1e-12) continue;
          plan.steps[0] << ax, bx, ay, by;
          best = std::min(best, rollout_cost(f, plan, pr));
        }
  CHECK(r.cost <= best + 1e-9);
}

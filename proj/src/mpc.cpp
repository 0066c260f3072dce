#include "flockforge/mpc.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>

namespace flockforge {

void MpcParams::validate() const {
  if (horizon < 1) throw ConfigError("mpc.horizon must be >= 1");
  if (descent_iters < 1) throw ConfigError("mpc.descent_iters must be >= 1");
  if (!(step_size > 0)) throw ConfigError("mpc.step_size must be > 0");
  if (!(backtrack > 0 && backtrack < 1)) throw ConfigError("mpc.backtrack must lie in (0, 1)");
  if (!(lambda >= 0)) throw ConfigError("mpc.lambda must be >= 0");
  if (!(tol >= 0)) throw ConfigError("mpc.tol must be >= 0");
  if (max_backtracks < 1) throw ConfigError("mpc.max_backtracks must be >= 1");
  if (!(clearance_margin >= 0)) throw ConfigError("mpc.clearance_margin must be >= 0");
}

ControlPlan ControlPlan::zeros(int horizon, int dim, int agents) {
  return {std::vector<Matrix>(horizon, Matrix::Zero(dim, agents))};
}

int Trajectory::actions() const {
  int count = 0;
  for (const auto& s : snapshots)
    if (s.accel.size() > 0) ++count;
  return count;
}

namespace {

/// Clamps w column by column to `bound`; returns the clamped copy.
Matrix clamp_columns(const Matrix& w, double bound) {
  Matrix out = w;
  for (Eigen::Index i = 0; i < w.cols(); ++i) {
    const double norm = w.col(i).norm();
    if (norm > bound) out.col(i) *= bound / norm;
  }
  return out;
}

/// J^T g for the magnitude clamp (the Jacobian is symmetric).
Vec clamp_vjp(const Vec& w, const Vec& g, double bound) {
  const double norm = w.norm();
  if (norm <= bound) return g;
  const Vec u = w / norm;
  return (bound / norm) * (g - u * u.dot(g));
}

double effort(const ControlPlan& plan) {
  double sum = 0.0;
  for (const auto& a : plan.steps) sum += a.squaredNorm();
  return sum;
}

void check_plan(const ControlPlan& plan, int dim, int agents, int horizon) {
  if (plan.horizon() != horizon) throw std::invalid_argument("plan horizon does not match mpc.horizon");
  for (const auto& a : plan.steps)
    if (a.rows() != dim || a.cols() != agents) throw std::invalid_argument("plan shape does not match flock");
}

struct PredatorModel {
  bool present = false;
  double a_bound = 0.0;
  double v_bound = 0.0;
};

PredatorModel predator_model(const FlockState& flock, const MpcProblem& problem) {
  PredatorModel m;
  m.present = flock.predator.has_value();
  m.a_bound = problem.predator.f_p * problem.sim.a_max;
  m.v_bound = problem.predator.f_p * problem.sim.v_max;
  return m;
}

/// Forward pass of the centralized rollout; fills the tape when requested.
struct CentralTape {
  std::vector<Matrix> w;        // pre-clamp agent velocities, one per dynamics step
  std::vector<Matrix> p_end;    // agent positions at each control-step boundary
  std::vector<Vec> wp;          // pre-clamp predator velocity per dynamics step
  std::vector<Vec> pp_end;      // predator position at each boundary
  std::vector<Vec> pursuit;     // centroid - predator at the start of each control step
};

double central_forward(const FlockState& flock, const ControlPlan& plan, const MpcProblem& problem,
                       CentralTape* tape) {
  const auto& sim = problem.sim;
  const int horizon = problem.mpc.horizon;
  check_plan(plan, flock.dim(), flock.size(), horizon);
  const PredatorModel pm = predator_model(flock, problem);

  Matrix P = flock.positions();
  Matrix V = flock.velocities();
  Vec pp, pv;
  if (pm.present) {
    pp = flock.predator->p;
    pv = flock.predator->v;
  }
  double cost = 0.0;
  for (int t = 0; t < horizon; ++t) {
    Vec ap;
    if (pm.present) {
      const Vec u = P.rowwise().mean() - pp;
      const double norm = u.norm();
      ap = norm > 0 ? Vec(u * (pm.a_bound / norm)) : Vec(Vec::Zero(u.size()));
      if (tape) tape->pursuit.push_back(u);
    }
    const Matrix& A = plan.steps[t];
    for (int s = 0; s < sim.eta; ++s) {
      P += sim.dt * V;
      Matrix W = V + sim.dt * A;
      V = clamp_columns(W, sim.v_max);
      if (tape) tape->w.push_back(std::move(W));
      if (pm.present) {
        pp += sim.dt * pv;
        Vec wp = pv + sim.dt * ap;
        pv = clamp_vector(wp, pm.v_bound);
        if (tape) tape->wp.push_back(std::move(wp));
      }
    }
    cost += task_cost(P, problem.cost, pm.present ? &pp : nullptr).total;
    if (tape) {
      tape->p_end.push_back(P);
      if (pm.present) tape->pp_end.push_back(pp);
    }
  }
  return cost + problem.mpc.lambda * effort(plan);
}

template <typename CostFn>
ControlPlan finite_difference(const ControlPlan& plan, CostFn&& cost) {
  constexpr double h = 1e-6;
  ControlPlan grad = plan;
  ControlPlan probe = plan;
  for (std::size_t t = 0; t < plan.steps.size(); ++t) {
    for (Eigen::Index k = 0; k < plan.steps[t].size(); ++k) {
      const double x = plan.steps[t](k);
      probe.steps[t](k) = x + h;
      const double up = cost(probe);
      probe.steps[t](k) = x - h;
      const double down = cost(probe);
      probe.steps[t](k) = x;
      grad.steps[t](k) = (up - down) / (2 * h);
    }
  }
  return grad;
}

ControlPlan project(ControlPlan plan, double a_max) {
  for (auto& a : plan.steps) a = clamp_columns(a, a_max);
  return plan;
}

void axpy(ControlPlan& x, double alpha, const ControlPlan& g) {
  for (std::size_t t = 0; t < x.steps.size(); ++t) x.steps[t] += alpha * g.steps[t];
}

double squared_norm(const ControlPlan& g) { return effort(g); }

/// Projected gradient descent with backtracking. Only strict improvements are
/// accepted, so the returned cost never exceeds the starting cost.
template <typename CostFn, typename GradFn>
SolveResult descend(ControlPlan start, const MpcParams& mpc, double a_max, CostFn&& cost,
                    GradFn&& grad) {
  SolveResult out;
  out.plan = project(std::move(start), a_max);
  out.cost = cost(out.plan);
  out.evaluations = 1;
  for (int it = 0; it < mpc.descent_iters; ++it) {
    const ControlPlan g = grad(out.plan);
    ++out.evaluations;
    if (squared_norm(g) == 0.0) break;
    double step = mpc.step_size;
    bool accepted = false;
    ControlPlan candidate;
    double candidate_cost = 0.0;
    for (int b = 0; b < mpc.max_backtracks; ++b, step *= mpc.backtrack) {
      candidate = out.plan;
      axpy(candidate, -step, g);
      candidate = project(std::move(candidate), a_max);
      candidate_cost = cost(candidate);
      ++out.evaluations;
      if (candidate_cost < out.cost) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double improvement = out.cost - candidate_cost;
    const double scale = std::max(std::abs(out.cost), std::numeric_limits<double>::min());
    out.plan = std::move(candidate);
    out.cost = candidate_cost;
    out.iterations = it + 1;
    if (improvement <= mpc.tol * scale) break;
  }
  return out;
}

/// Coasting neighbour/predator state shared by the local rollouts.
struct LocalScene {
  Vec p, v;
  Matrix q, qv;  // neighbour positions and velocities (dim x N)
  bool has_predator = false;
  Vec pp, pv;
};

LocalScene local_scene(const FlockState& flock, int i, const std::vector<int>& neighbors) {
  LocalScene sc;
  sc.p = flock.agents.at(i).p;
  sc.v = flock.agents.at(i).v;
  sc.q.resize(flock.dim(), static_cast<Eigen::Index>(neighbors.size()));
  sc.qv.resizeLike(sc.q);
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    sc.q.col(j) = flock.agents.at(neighbors[j]).p;
    sc.qv.col(j) = flock.agents.at(neighbors[j]).v;
  }
  if (flock.predator) {
    sc.has_predator = true;
    sc.pp = flock.predator->p;
    sc.pv = flock.predator->v;
  }
  return sc;
}

double local_forward(LocalScene sc, const ControlPlan& plan, const MpcProblem& problem,
                     std::vector<Vec>* w_tape, std::vector<Vec>* p_tape, std::vector<Matrix>* q_tape,
                     std::vector<Vec>* pred_tape) {
  const auto& sim = problem.sim;
  check_plan(plan, static_cast<int>(sc.p.size()), 1, problem.mpc.horizon);
  if (problem.cost.task == Task::PredatorAvoidance && !sc.has_predator)
    throw std::invalid_argument("predator avoidance needs a predator in the flock state");
  double cost = 0.0;
  for (int t = 0; t < problem.mpc.horizon; ++t) {
    const Vec a = plan.steps[t].col(0);
    for (int s = 0; s < sim.eta; ++s) {
      sc.p += sim.dt * sc.v;
      Vec w = sc.v + sim.dt * a;
      sc.v = clamp_vector(w, sim.v_max);
      if (w_tape) w_tape->push_back(std::move(w));
      sc.q += sim.dt * sc.qv;
      if (sc.has_predator) sc.pp += sim.dt * sc.pv;
    }
    cost += local_task_cost(sc.p, sc.q, problem.cost, sc.has_predator ? &sc.pp : nullptr).value;
    if (p_tape) p_tape->push_back(sc.p);
    if (q_tape) q_tape->push_back(sc.q);
    if (pred_tape && sc.has_predator) pred_tape->push_back(sc.pp);
  }
  return cost + problem.mpc.lambda * effort(plan);
}

// The problem the rollouts actually score: clearances widened by the margin.
const MpcProblem& planning(const MpcProblem& problem, MpcProblem& storage) {
  if (problem.mpc.clearance_margin == 0.0) return problem;
  storage = problem;
  storage.cost.d_min += problem.mpc.clearance_margin;
  storage.cost.d_min_pred += problem.mpc.clearance_margin;
  return storage;
}

}  // namespace

double rollout_cost(const FlockState& flock, const ControlPlan& plan, const MpcProblem& problem_in) {
  MpcProblem storage;
  return central_forward(flock, plan, planning(problem_in, storage), nullptr);
}

RolloutGradient rollout_cost_gradient(const FlockState& flock, const ControlPlan& plan,
                                      const MpcProblem& problem_in) {
  MpcProblem storage;
  const MpcProblem& problem = planning(problem_in, storage);
  CentralTape tape;
  RolloutGradient out;
  out.cost = central_forward(flock, plan, problem, &tape);
  const auto& sim = problem.sim;
  const int horizon = problem.mpc.horizon;
  const int n = flock.size();
  const PredatorModel pm = predator_model(flock, problem);

  out.gradient = ControlPlan::zeros(horizon, flock.dim(), n);
  Matrix gP = Matrix::Zero(flock.dim(), n);
  Matrix gV = Matrix::Zero(flock.dim(), n);
  Vec gpp, gpv;
  if (pm.present) {
    gpp = Vec::Zero(flock.dim());
    gpv = Vec::Zero(flock.dim());
  }
  for (int t = horizon - 1; t >= 0; --t) {
    const CostGradient cg =
        task_cost_gradient(tape.p_end[t], problem.cost, pm.present ? &tape.pp_end[t] : nullptr);
    gP += cg.positions;
    if (pm.present && cg.predator.size() > 0) gpp += cg.predator;

    Matrix& gA = out.gradient.steps[t];
    Vec gap = pm.present ? Vec(Vec::Zero(flock.dim())) : Vec();
    for (int s = sim.eta - 1; s >= 0; --s) {
      const Matrix& W = tape.w[t * sim.eta + s];
      for (int i = 0; i < n; ++i) {
        const Vec gw = clamp_vjp(W.col(i), gV.col(i), sim.v_max);
        gA.col(i) += sim.dt * gw;
        gV.col(i) = gw;
      }
      gV += sim.dt * gP;
      if (pm.present) {
        const Vec gwp = clamp_vjp(tape.wp[t * sim.eta + s], gpv, pm.v_bound);
        gap += sim.dt * gwp;
        gpv = gwp + sim.dt * gpp;
      }
    }
    if (pm.present) {
      // a_pred = k * u / |u| with u = centroid - p_pred.
      const Vec& u = tape.pursuit[t];
      const double norm = u.norm();
      if (norm > 0) {
        const Vec uh = u / norm;
        const Vec gu = (pm.a_bound / norm) * (gap - uh * uh.dot(gap));
        gpp -= gu;
        gP.colwise() += gu / static_cast<double>(n);
      }
    }
    gA += 2.0 * problem.mpc.lambda * plan.steps[t];
  }
  return out;
}

double local_rollout_cost(const FlockState& flock, int i, const std::vector<int>& neighbors,
                          const ControlPlan& plan, const MpcProblem& problem_in) {
  MpcProblem storage;
  return local_forward(local_scene(flock, i, neighbors), plan, planning(problem_in, storage), nullptr,
                       nullptr, nullptr, nullptr);
}

RolloutGradient local_rollout_cost_gradient(const FlockState& flock, int i,
                                            const std::vector<int>& neighbors, const ControlPlan& plan,
                                            const MpcProblem& problem_in) {
  MpcProblem storage;
  const MpcProblem& problem = planning(problem_in, storage);
  std::vector<Vec> w_tape, p_tape, pred_tape;
  std::vector<Matrix> q_tape;
  RolloutGradient out;
  out.cost = local_forward(local_scene(flock, i, neighbors), plan, problem, &w_tape, &p_tape, &q_tape,
                           &pred_tape);
  const auto& sim = problem.sim;
  const int dim = flock.dim();
  out.gradient = ControlPlan::zeros(problem.mpc.horizon, dim, 1);
  Vec gp = Vec::Zero(dim);
  Vec gv = Vec::Zero(dim);
  for (int t = problem.mpc.horizon - 1; t >= 0; --t) {
    const Vec* pred = pred_tape.empty() ? nullptr : &pred_tape[t];
    gp += local_task_cost(p_tape[t], q_tape[t], problem.cost, pred).gradient;
    Vec ga = Vec::Zero(dim);
    for (int s = sim.eta - 1; s >= 0; --s) {
      const Vec gw = clamp_vjp(w_tape[t * sim.eta + s], gv, sim.v_max);
      ga += sim.dt * gw;
      gv = gw + sim.dt * gp;
    }
    out.gradient.steps[t].col(0) = ga + 2.0 * problem.mpc.lambda * plan.steps[t].col(0);
  }
  return out;
}

SolveResult solve_centralized_plan(const FlockState& flock, const MpcProblem& problem,
                                   const ControlPlan* warm) {
  if (flock.size() < 2) throw std::invalid_argument("solve_centralized needs at least two agents");
  const auto zero = ControlPlan::zeros(problem.mpc.horizon, flock.dim(), flock.size());
  auto cost = [&](const ControlPlan& p) { return rollout_cost(flock, p, problem); };
  auto grad = [&](const ControlPlan& p) {
    if (problem.mpc.gradient == GradientMode::FiniteDifference) return finite_difference(p, cost);
    return rollout_cost_gradient(flock, p, problem).gradient;
  };
  const double zero_cost = cost(zero);
  SolveResult result = descend(warm ? *warm : zero, problem.mpc, problem.sim.a_max, cost, grad);
  if (result.cost > zero_cost) {
    // A warm start can begin above the zero plan; fall back to a cold solve.
    result = descend(zero, problem.mpc, problem.sim.a_max, cost, grad);
  }
  result.zero_plan_cost = zero_cost;
  return result;
}

Matrix solve_centralized(const FlockState& flock, const MpcProblem& problem) {
  return solve_centralized_plan(flock, problem).plan.steps.front();
}

SolveResult solve_distributed_plan(const FlockState& flock, int i, int neighbor_count,
                                   const MpcProblem& problem) {
  const std::vector<int> nbrs = nearest_neighbors(flock, i, neighbor_count);
  const auto zero = ControlPlan::zeros(problem.mpc.horizon, flock.dim(), 1);
  auto cost = [&](const ControlPlan& p) { return local_rollout_cost(flock, i, nbrs, p, problem); };
  auto grad = [&](const ControlPlan& p) {
    if (problem.mpc.gradient == GradientMode::FiniteDifference) return finite_difference(p, cost);
    return local_rollout_cost_gradient(flock, i, nbrs, p, problem).gradient;
  };
  SolveResult result = descend(zero, problem.mpc, problem.sim.a_max, cost, grad);
  result.zero_plan_cost = cost(zero);
  return result;
}

Vec solve_distributed(const FlockState& flock, int i, int neighbor_count, const MpcProblem& problem) {
  return solve_distributed_plan(flock, i, neighbor_count, problem).plan.steps.front().col(0);
}

Matrix CentralizedMpc::act(const FlockState& flock) {
  std::optional<ControlPlan> warm;
  if (problem_.mpc.warm_start && previous_) {
    // Shift by one control step; the new tail starts from zero.
    ControlPlan shifted = *previous_;
    shifted.steps.erase(shifted.steps.begin());
    shifted.steps.push_back(Matrix::Zero(flock.dim(), flock.size()));
    if (shifted.steps.front().cols() == flock.size()) warm = std::move(shifted);
  }
  SolveResult r = solve_centralized_plan(flock, problem_, warm ? &*warm : nullptr);
  Matrix first = r.plan.steps.front();
  if (problem_.mpc.warm_start) previous_ = std::move(r.plan);
  return first;
}

Matrix DistributedMpc::act(const FlockState& flock) {
  Matrix out(flock.dim(), flock.size());
  for (int i = 0; i < flock.size(); ++i) out.col(i) = solve_distributed(flock, i, neighbor_count_, problem_);
  return out;
}

FlockState advance_control_step(const FlockState& flock, const Matrix& accel, const SimParams& sim,
                                const PredatorParams& predator) {
  FlockState next = flock;
  Vec pred_accel;
  if (next.predator) pred_accel = predator_control(flock, sim, predator);
  for (int s = 0; s < sim.eta; ++s) {
    for (int i = 0; i < next.size(); ++i) next.agents[i] = step_agent(next.agents[i], accel.col(i), sim);
    if (next.predator) {
      *next.predator = step_agent(*next.predator, pred_accel, sim.dt, predator.f_p * sim.v_max);
    }
  }
  next.time_step += sim.eta;
  return next;
}

Trajectory control_loop(const FlockState& initial, Controller& controller, const SimParams& sim,
                        const PredatorParams& predator, LoopStats* stats) {
  using clock = std::chrono::steady_clock;
  Trajectory traj;
  traj.meta.controller = controller.name();
  traj.meta.sim = sim;
  traj.meta.predator = predator;
  controller.reset();
  const int steps = sim.control_steps();
  traj.snapshots.reserve(steps + 1);
  traj.snapshots.push_back({initial, Matrix(), Matrix()});
  for (int k = 0; k < steps; ++k) {
    const FlockState& state = traj.snapshots.back().state;
    const auto t0 = clock::now();
    Matrix accel = controller.act(state);
    const auto t1 = clock::now();
    if (stats) {
      stats->decision_seconds += std::chrono::duration<double>(t1 - t0).count();
      stats->decisions += 1;
      stats->agent_decisions += state.size();
    }
    if (!accel.allFinite()) throw DivergenceError(controller.name() + " produced a non-finite action");
    accel = clamp_columns(accel, sim.a_max);
    FlockState next = advance_control_step(state, accel, sim, predator);
    traj.snapshots.back().accel = std::move(accel);
    traj.snapshots.push_back({std::move(next), Matrix(), Matrix()});
  }
  return traj;
}

}  // namespace flockforge

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flockforge/costs.hpp"
#include "flockforge/dynamics.hpp"
#include "flockforge/trajectory.hpp"

namespace flockforge {

enum class GradientMode { Adjoint, FiniteDifference };

struct MpcParams {
  int horizon = 3;
  double lambda = 1.0;
  int descent_iters = 50;
  double step_size = 1.0;
  double backtrack = 0.5;
  double tol = 1e-6;
  /// Halvings tried per iteration before the descent gives up.
  int max_backtracks = 40;
  GradientMode gradient = GradientMode::Adjoint;
  bool warm_start = false;
  /// Added to d_min and d_min_pred inside the planner's penalties only. The
  /// exact-penalty optimum sits on the constraint boundary, so without a
  /// little slack the closed loop grazes d_min from the wrong side.
  double clearance_margin = 0.0;

  void validate() const;
};

/// Everything a model-predictive controller needs besides the current state.
struct MpcProblem {
  CostSpec cost;
  MpcParams mpc;
  SimParams sim;
  PredatorParams predator;
};

/// Predicted accelerations: `steps[t]` is dim x m (m = n centralized, 1 distributed).
struct ControlPlan {
  std::vector<Matrix> steps;

  static ControlPlan zeros(int horizon, int dim, int agents);
  int horizon() const { return static_cast<int>(steps.size()); }
};

/// Sum over the horizon of the task cost at each predicted control-step
/// boundary plus lambda * sum |a|^2. Penalty clearances include
/// mpc.clearance_margin.
double rollout_cost(const FlockState& flock, const ControlPlan& plan, const MpcProblem& problem);

struct RolloutGradient {
  double cost = 0.0;
  ControlPlan gradient;
};

/// Cost and its gradient w.r.t. every plan entry (reverse accumulation
/// through the clamped dynamics and the predator's pursuit law).
RolloutGradient rollout_cost_gradient(const FlockState& flock, const ControlPlan& plan,
                                      const MpcProblem& problem);

/// Distributed rollout for agent `i`: neighbours and predator coast.
double local_rollout_cost(const FlockState& flock, int i, const std::vector<int>& neighbors,
                          const ControlPlan& plan, const MpcProblem& problem);
RolloutGradient local_rollout_cost_gradient(const FlockState& flock, int i,
                                            const std::vector<int>& neighbors, const ControlPlan& plan,
                                            const MpcProblem& problem);

struct SolveResult {
  ControlPlan plan;
  double cost = 0.0;
  double zero_plan_cost = 0.0;
  int iterations = 0;
  int evaluations = 0;
};

/// Projected gradient descent with backtracking on the joint plan.
SolveResult solve_centralized_plan(const FlockState& flock, const MpcProblem& problem,
                                   const ControlPlan* warm = nullptr);
/// First action a(k|k) for every agent (dim x n).
Matrix solve_centralized(const FlockState& flock, const MpcProblem& problem);

SolveResult solve_distributed_plan(const FlockState& flock, int i, int neighbor_count,
                                   const MpcProblem& problem);
Vec solve_distributed(const FlockState& flock, int i, int neighbor_count, const MpcProblem& problem);

/// Maps a flock state to one acceleration per agent (dim x n).
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual Matrix act(const FlockState& flock) = 0;
  /// Called before a new run starts.
  virtual void reset() {}
};

class ZeroController final : public Controller {
 public:
  std::string name() const override { return "zero"; }
  Matrix act(const FlockState& flock) override { return Matrix::Zero(flock.dim(), flock.size()); }
};

class CentralizedMpc final : public Controller {
 public:
  explicit CentralizedMpc(MpcProblem problem) : problem_(std::move(problem)) {}
  std::string name() const override { return "cmpc"; }
  Matrix act(const FlockState& flock) override;
  void reset() override { previous_.reset(); }

 private:
  MpcProblem problem_;
  std::optional<ControlPlan> previous_;
};

class DistributedMpc final : public Controller {
 public:
  DistributedMpc(MpcProblem problem, int neighbor_count)
      : problem_(std::move(problem)), neighbor_count_(neighbor_count) {}
  std::string name() const override { return "dmpc"; }
  Matrix act(const FlockState& flock) override;

 private:
  MpcProblem problem_;
  int neighbor_count_;
};

struct LoopStats {
  double decision_seconds = 0.0;  // total wall time inside Controller::act
  int decisions = 0;              // number of act() calls
  int agent_decisions = 0;        // act() calls times agents
};

/// Closed-loop simulation on the point model. Records the initial state plus
/// one snapshot per control step.
Trajectory control_loop(const FlockState& initial, Controller& controller, const SimParams& sim,
                        const PredatorParams& predator, LoopStats* stats = nullptr);

/// Advances every agent (and the predator, if present) by one control step of
/// eta dynamics steps with the given held accelerations.
FlockState advance_control_step(const FlockState& flock, const Matrix& accel, const SimParams& sim,
                                const PredatorParams& predator);

}  // namespace flockforge

#pragma once

#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "flockforge/common.hpp"
#include "flockforge/dynamics.hpp"

namespace flockforge {

enum class Task { BasicFlocking, CollisionAvoidance, ObstacleTarget, PredatorAvoidance };

std::string_view task_name(Task task);
/// Accepts the snake_case names used in config files.
Task parse_task(std::string_view name);
bool task_uses_penalty(Task task);

/// Raised by the separation term when two agents coincide exactly.
class CoincidentAgentsError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct CostSpec {
  Task task = Task::BasicFlocking;
  double omega = 2000.0;
  double rho = 100000.0;
  double omega_t = 1.0;
  double d_min = 2.0;
  double d_min_pred = 4.0;
  double r = 60.0;  // separation neighbourhood radius
  std::optional<Vec> target;
  std::vector<Obstacle> obstacles;

  void validate() const;
};

/// Unweighted cost terms. `penalty` is the combined violation norm of the task.
struct CostValue {
  double total = 0.0;
  double cohesion = 0.0;
  double separation = 0.0;
  double penalty = 0.0;
  double target = 0.0;
  double effort = 0.0;

  /// Recomputes the total from the terms using the weights in `spec`; the
  /// effort term is weighted by the MPC's lambda.
  double weighted_sum(const CostSpec& spec, double lambda = 0.0) const;
};

// Individual terms. `positions` is dim x n, one column per agent.
double cohesion_cost(const Matrix& positions);
double separation_cost(const Matrix& positions, double r);
double collision_penalty(const Matrix& positions, double d_min);
double obstacle_penalty(const Matrix& positions, const std::vector<Obstacle>& obstacles, double d_min);
double target_cost(const Matrix& positions, const Vec& target);
double predator_penalty(const Matrix& positions, const Vec& predator, double d_min_pred);

Matrix cohesion_gradient(const Matrix& positions);
Matrix separation_gradient(const Matrix& positions, double r);
Matrix target_gradient(const Matrix& positions, const Vec& target);

/// Flock-wide cost J1..J4 selected by spec.task. `predator` is required for J4.
CostValue task_cost(const Matrix& positions, const CostSpec& spec, const Vec* predator = nullptr);

struct CostGradient {
  Matrix positions;  // dim x n
  Vec predator;      // empty unless the task involves a predator
};

/// Gradient of task_cost().total; zero subgradient at the max(.,0) kinks and
/// at the origin of every penalty norm.
CostGradient task_cost_gradient(const Matrix& positions, const CostSpec& spec,
                                const Vec* predator = nullptr);

/// Per-agent cost for distributed MPC: cohesion and separation over the given
/// neighbours (omega weights separation), plus the task penalties restricted to
/// rows that involve this agent.
struct LocalCost {
  double value = 0.0;
  Vec gradient;  // w.r.t. the agent's own position
};

LocalCost local_task_cost(const Vec& self, const Matrix& neighbors, const CostSpec& spec,
                          const Vec* predator = nullptr);

}  // namespace flockforge

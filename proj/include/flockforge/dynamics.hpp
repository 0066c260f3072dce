#pragma once

#include <optional>
#include <vector>

#include "flockforge/common.hpp"

namespace flockforge {

struct SimParams {
  double dt = 0.1;
  int eta = 3;  // dynamics steps per control step
  double v_max = 2.0;
  double a_max = 1.5;
  int dim = 2;
  double sim_time = 100.0;

  /// Throws ConfigError on violated invariants.
  void validate() const;
  /// Number of control decisions in one simulated run.
  int control_steps() const;
};

struct AgentState {
  Vec p;
  Vec v;
};

struct FlockState {
  std::vector<AgentState> agents;
  std::optional<AgentState> predator;
  int time_step = 0;

  int size() const { return static_cast<int>(agents.size()); }
  int dim() const { return agents.empty() ? 0 : static_cast<int>(agents.front().p.size()); }
  Matrix positions() const;
  Matrix velocities() const;
  Vec centroid() const;
};

struct Obstacle {
  Vec center;
  double radius = 1.0;

  /// Closest point on the boundary to `p`. For p at the center, +x is used.
  Vec closest_point(const Vec& p) const;
  /// Signed distance to the boundary; negative inside.
  double distance(const Vec& p) const;
};

struct PredatorParams {
  double f_p = 1.25;
  double d_start = 50.0;
  /// Bearing from the flock centroid to the predator start (normalised on use).
  Vec bearing;

  void validate() const;
};

/// Sampling boxes and the rejection cap for initial configurations.
struct InitialBox {
  double pos_lo = -15.0;
  double pos_hi = 15.0;
  double vel_lo = 0.0;
  double vel_hi = 1.0;
  int rejection_cap = 10000;
};

/// Returns x if |x| <= bound, else x rescaled to magnitude `bound`.
Vec clamp_vector(const Vec& x, double bound);

/// One dynamics time step: p' = p + dt v, v' = clamp(v + dt a, v_max).
AgentState step_agent(const AgentState& s, const Vec& a, const SimParams& params);

/// Same update with velocity bound `v_max` supplied explicitly (used for the
/// predator, whose bound is f_p * v_max).
AgentState step_agent(const AgentState& s, const Vec& a, double dt, double v_max);

/// Seek the flock centroid with acceleration f_p * a_max.
Vec predator_control(const FlockState& flock, const SimParams& params, const PredatorParams& pp);

/// The `count` nearest agents to agent i, ascending by distance, ties by index.
std::vector<int> nearest_neighbors(const FlockState& flock, int i, int count);
std::vector<int> nearest_neighbors(const Matrix& positions, int i, int count);

/// True when agents i and j can still avoid closing within d_min by braking.
bool pair_recoverable(const AgentState& a, const AgentState& b, double a_max, double d_min);
bool flock_recoverable(const FlockState& flock, double a_max, double d_min);

/// Rejection-sampled recoverable configuration; deterministic in `seed`.
FlockState sample_initial_flock(int n, std::uint64_t seed, const SimParams& params, double d_min,
                                const InitialBox& box = {});

/// Predator at rest at centroid + d_start * unit(bearing).
AgentState place_predator(const FlockState& flock, const PredatorParams& pp);

}  // namespace flockforge

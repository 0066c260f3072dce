#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flockforge/costs.hpp"
#include "flockforge/dynamics.hpp"

namespace flockforge {

/// One recorded control step.
struct Snapshot {
  FlockState state;
  /// Applied accelerations (dim x n); empty for the final recorded state.
  Matrix accel;
  /// Full quadrotor states (12 x n) when the plant is a quadrotor flock.
  Matrix quad;
};

struct TrajectoryMeta {
  Task task = Task::BasicFlocking;
  std::uint64_t seed = 0;
  std::string controller;
  std::string plant = "point";
  SimParams sim;
  PredatorParams predator;
  std::vector<Obstacle> obstacles;
  std::optional<Vec> target;
};

struct Trajectory {
  TrajectoryMeta meta;
  std::vector<Snapshot> snapshots;

  int actions() const;
};

}  // namespace flockforge

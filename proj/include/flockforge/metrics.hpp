#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flockforge/trajectory.hpp"

namespace flockforge {

/// Largest pairwise distance. Needs at least two agents.
double diameter(const Matrix& positions);
double diameter(const FlockState& flock);

/// (1/n) sum |v_i - mean v|^2
double velocity_convergence(const Matrix& velocities);
double velocity_convergence(const FlockState& flock);

/// Per-step D and VC of one trajectory (one entry per snapshot).
struct MetricSeries {
  std::vector<double> diameter;
  std::vector<double> vc;

  std::size_t size() const { return diameter.size(); }
};

MetricSeries metric_series(const Trajectory& traj);

enum class CountMode { PerPair, PerState };

/// Collision tallies for one trajectory or a merged set of trajectories.
struct CollisionCounts {
  // Violating instances (per (state, pair) or per state, see CountMode).
  std::int64_t ic = 0, oc = 0, pc = 0;
  // States with at least one violation of each type.
  std::int64_t ic_states = 0, oc_states = 0, pc_states = 0;
  // Denominators.
  std::int64_t states = 0;
  std::int64_t ic_slots = 0, oc_slots = 0, pc_slots = 0;

  double ic_rate() const;
  double oc_rate() const;
  double pc_rate() const;
  // Alternative denominator: every (state, pair) instance.
  double ic_pair_rate() const;
  double oc_pair_rate() const;
  double pc_pair_rate() const;

  CollisionCounts& operator+=(const CollisionCounts& other);
};

struct CollisionReport {
  CollisionCounts counts;
  // One flag per snapshot.
  std::vector<std::uint8_t> ic_flag, oc_flag, pc_flag;
};

/// Obstacle collisions use the trajectory's own obstacle list; predator
/// collisions are only counted when the predator is recorded.
CollisionReport collision_events(const Trajectory& traj, double d_min, double d_min_pred,
                                 CountMode mode = CountMode::PerPair);

struct ConvergedStats {
  int runs = 0;
  double diameter_mean = 0, diameter_sd = 0;
  double vc_mean = 0, vc_sd = 0;
};

/// Mean and population SD of final-step D and VC across runs.
ConvergedStats converged_stats(const std::vector<MetricSeries>& runs);

/// Population mean and SD of a sample.
std::pair<double, double> mean_sd(const std::vector<double>& xs);

struct DifferenceCurve {
  std::vector<double> delta;
  bool truncated = false;  // inputs had unequal lengths
};

/// Pointwise avg(A) - avg(B), truncated to the shortest series.
DifferenceCurve series_difference(const std::vector<std::vector<double>>& a,
                                  const std::vector<std::vector<double>>& b);

struct EvalReport {
  std::string controller;
  std::string task;
  std::string plant = "point";
  ConvergedStats converged;
  CollisionCounts collisions;
  double seconds_per_decision = 0.0;
  double seconds_per_agent_decision = 0.0;

  // Timing varies between runs; leave it out where outputs must be reproducible.
  std::string to_json(bool with_timing = true) const;
  static std::string csv_header(bool with_timing = true);
  std::string csv_row(bool with_timing = true) const;
};

/// step,diameter,vc
void write_series_csv(std::ostream& out, const MetricSeries& series);
/// step,delta
void write_curve_csv(std::ostream& out, const std::vector<double>& curve, const std::string& column);

}  // namespace flockforge

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "flockforge/mpc.hpp"
#include "flockforge/neural.hpp"
#include "flockforge/quadrotor.hpp"
#include "flockforge/trajectory.hpp"

namespace flockforge {

/// What one batch of runs looks like: plant and task parameters plus the
/// flock size and initial sampling box.
struct Scenario {
  MpcProblem problem;
  int agents = 10;
  InitialBox box;
  /// Fly every agent as a quadrotor instead of a point mass.
  bool quad_plant = false;
  QuadLoopConfig quad;
};

/// Recoverable initial flock for `seed`; adds the predator for predator avoidance.
FlockState initial_state(const Scenario& scenario, std::uint64_t seed);

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

struct BatchResult {
  std::vector<Trajectory> trajectories;
  LoopStats stats;
};

/// Runs `count` closed loops from seeds seed, seed+1, ... Trajectories are
/// independent, so they are spread over `threads` workers; results keep seed order.
BatchResult run_batch(const Scenario& scenario, const ControllerFactory& make_controller, std::uint64_t seed,
                      int count, int threads = 1);

/// CMPC expert trajectories.
std::vector<Trajectory> generate_expert_data(const Scenario& scenario, std::uint64_t seed, int count,
                                             int threads = 1);

/// One sample per (trajectory, recorded action, agent); final states carry no action and are skipped.
Dataset extract_samples(const std::vector<Trajectory>& trajectories, Layout layout);

struct DatasetSplit {
  Dataset train;
  Dataset holdout;
};

/// Holds out the last ceil(fraction * T) source trajectories (T distinct ids).
DatasetSplit split_by_trajectory(const Dataset& data, double holdout_fraction);

/// Largest deviation between stored states and a replay of the stored actions.
double replay_error(const Trajectory& traj);

/// FLOCKFORGE_THREADS if set, else the hardware concurrency (at least 1).
int default_threads();

/// Malformed trajectory or dataset file; `line` is 1-based.
class ParseError : public IoError {
 public:
  ParseError(const std::string& what, long line)
      : IoError("line " + std::to_string(line) + ": " + what), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

inline constexpr int kSchemaVersion = 1;

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> read_trajectories(std::istream& in);
void save_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> load_trajectories(const std::string& path);

void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

}  // namespace flockforge

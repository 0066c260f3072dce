#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flockforge/metrics.hpp"
#include "flockforge/mpc.hpp"
#include "flockforge/neural.hpp"
#include "flockforge/pipeline.hpp"
#include "flockforge/quadrotor.hpp"

namespace flockforge {

struct DataConfig {
  int trajectories = 20;
  std::uint64_t seed = 1000;
  double holdout_fraction = 0.1;
};

struct EvalConfig {
  int runs = 10;
  std::uint64_t seed = 5000;
  CountMode count_mode = CountMode::PerPair;
};

/// Everything one experiment needs. Built from a profile preset, then
/// overlaid with the user's JSON and any command-line overrides.
struct ExperimentConfig {
  std::string profile = "desk2d";
  Task task = Task::BasicFlocking;
  int agents = 10;
  int neighbors = 5;
  SimParams sim;
  MpcParams mpc;
  CostSpec cost;            // cost.omega is the centralized separation weight
  double omega_dmpc = 30.0;  // separation weight for the distributed controller
  PredatorParams predator;
  InitialBox init;
  DataConfig data;
  Layout layout = Layout::BF24;
  AdamConfig adam;
  Architecture arch;
  bool standardize = true;
  EvalConfig eval;
  QuadLoopConfig quad;

  /// Field-level checks plus task/layout/dimension consistency.
  /// Messages start with the offending key path.
  void validate() const;

  MpcProblem centralized_problem() const;
  MpcProblem distributed_problem() const;
  Scenario scenario() const;
  TrainConfig train_config() const;
};

const std::vector<std::string>& profile_names();
ExperimentConfig profile_config(const std::string& name);

/// Full, resolved config as pretty JSON (stable key order).
std::string config_json(const ExperimentConfig& config);

/// `text` is a JSON object. Its `profile` (default desk2d) picks the preset;
/// the remaining keys overlay it. Each override is "dotted.key=json-value"
/// (a bare word is taken as a string). Unknown keys are rejected.
ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});

}  // namespace flockforge

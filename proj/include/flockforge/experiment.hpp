#pragma once

#include <string>
#include <vector>

#include "flockforge/config.hpp"

namespace flockforge {

/// Per-step diameter and VC of every trajectory.
std::vector<MetricSeries> series_of(const std::vector<Trajectory>& trajectories);

/// Converged statistics and collision counts over a trajectory set. Timing
/// fields are left at zero; the caller fills them from its own measurements.
EvalReport evaluate_trajectories(const std::vector<Trajectory>& trajectories, double d_min, double d_min_pred,
                                 CountMode mode = CountMode::PerPair);

/// The four point/quad x DNC/CMPC run sets on shared initial states, and the
/// gaps point minus quad.
struct QuadComparison {
  BatchResult dnc_point, dnc_quad, cmpc_point, cmpc_quad;
  DifferenceCurve dnc_dD, dnc_dVC, cmpc_dD, cmpc_dVC;
};

QuadComparison run_quad_comparison(const ExperimentConfig& config, const Mlp& net, int threads = 1);

/// Mean of |x| over the second half of the curve (from index size/2).
double late_mean_abs(const std::vector<double>& curve);

/// Diameter averaged over runs and over the second half of each run.
double late_mean_diameter(const std::vector<MetricSeries>& runs);

}  // namespace flockforge

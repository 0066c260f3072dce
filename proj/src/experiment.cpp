#include "flockforge/experiment.hpp"

#include <cmath>

namespace flockforge {

std::vector<MetricSeries> series_of(const std::vector<Trajectory>& trajectories) {
  std::vector<MetricSeries> out;
  out.reserve(trajectories.size());
  for (const auto& t : trajectories) out.push_back(metric_series(t));
  return out;
}

EvalReport evaluate_trajectories(const std::vector<Trajectory>& trajectories, double d_min, double d_min_pred,
                                 CountMode mode) {
  if (trajectories.empty()) throw ConfigError("no trajectories to evaluate");
  EvalReport r;
  r.controller = trajectories.front().meta.controller;
  r.task = std::string(task_name(trajectories.front().meta.task));
  r.plant = trajectories.front().meta.plant;
  r.converged = converged_stats(series_of(trajectories));
  for (const auto& t : trajectories) r.collisions += collision_events(t, d_min, d_min_pred, mode).counts;
  return r;
}

namespace {

std::vector<std::vector<double>> pick(const std::vector<MetricSeries>& runs, bool diameter) {
  std::vector<std::vector<double>> out;
  for (const auto& s : runs) out.push_back(diameter ? s.diameter : s.vc);
  return out;
}

}  // namespace

QuadComparison run_quad_comparison(const ExperimentConfig& config, const Mlp& net, int threads) {
  if (config.layout != Layout::BF36 || config.sim.dim != 3)
    throw ConfigError("quad comparison needs the 3D basic flocking setup (BF36)");
  if (net.input_width() != layout_width(Layout::BF36) || net.output_width() != 3)
    throw ConfigError("checkpoint: network shape does not match BF36");

  Scenario point = config.scenario();
  Scenario quad = point;
  quad.quad_plant = true;
  const double a_max = config.sim.a_max;
  const ControllerFactory dnc = [&] { return std::make_unique<NeuralController>(net, Layout::BF36, a_max); };
  const MpcProblem problem = config.centralized_problem();
  const ControllerFactory cmpc = [&] { return std::make_unique<CentralizedMpc>(problem); };

  QuadComparison c;
  const auto seed = config.eval.seed;
  const int runs = config.eval.runs;
  c.dnc_point = run_batch(point, dnc, seed, runs, threads);
  c.dnc_quad = run_batch(quad, dnc, seed, runs, threads);
  c.cmpc_point = run_batch(point, cmpc, seed, runs, threads);
  c.cmpc_quad = run_batch(quad, cmpc, seed, runs, threads);

  const auto dp = series_of(c.dnc_point.trajectories), dq = series_of(c.dnc_quad.trajectories);
  const auto cp = series_of(c.cmpc_point.trajectories), cq = series_of(c.cmpc_quad.trajectories);
  c.dnc_dD = series_difference(pick(dp, true), pick(dq, true));
  c.dnc_dVC = series_difference(pick(dp, false), pick(dq, false));
  c.cmpc_dD = series_difference(pick(cp, true), pick(cq, true));
  c.cmpc_dVC = series_difference(pick(cp, false), pick(cq, false));
  return c;
}

double late_mean_abs(const std::vector<double>& curve) {
  if (curve.empty()) return 0.0;
  const std::size_t start = curve.size() / 2;
  double s = 0.0;
  for (std::size_t k = start; k < curve.size(); ++k) s += std::abs(curve[k]);
  return s / static_cast<double>(curve.size() - start);
}

double late_mean_diameter(const std::vector<MetricSeries>& runs) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) {
    for (std::size_t k = r.diameter.size() / 2; k < r.diameter.size(); ++k, ++n) s += r.diameter[k];
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace flockforge

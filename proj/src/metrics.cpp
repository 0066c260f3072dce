#include "flockforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace flockforge {

double diameter(const Matrix& P) {
  if (P.cols() < 2) throw std::invalid_argument("diameter needs at least two agents");
  double best = 0.0;
  for (Eigen::Index i = 0; i < P.cols(); ++i)
    for (Eigen::Index j = i + 1; j < P.cols(); ++j) best = std::max(best, (P.col(i) - P.col(j)).squaredNorm());
  return std::sqrt(best);
}

double diameter(const FlockState& flock) { return diameter(flock.positions()); }

double velocity_convergence(const Matrix& V) {
  if (V.cols() == 0) return 0.0;
  const Vec mean = V.rowwise().mean();
  return (V.colwise() - mean).colwise().squaredNorm().mean();
}

double velocity_convergence(const FlockState& flock) { return velocity_convergence(flock.velocities()); }

MetricSeries metric_series(const Trajectory& traj) {
  MetricSeries s;
  s.diameter.reserve(traj.snapshots.size());
  s.vc.reserve(traj.snapshots.size());
  for (const auto& snap : traj.snapshots) {
    s.diameter.push_back(diameter(snap.state));
    s.vc.push_back(velocity_convergence(snap.state));
  }
  return s;
}

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

}  // namespace

double CollisionCounts::ic_rate() const { return ratio(ic_states, states); }
double CollisionCounts::oc_rate() const { return ratio(oc_states, states); }
double CollisionCounts::pc_rate() const { return ratio(pc_states, states); }
double CollisionCounts::ic_pair_rate() const { return ratio(ic, ic_slots); }
double CollisionCounts::oc_pair_rate() const { return ratio(oc, oc_slots); }
double CollisionCounts::pc_pair_rate() const { return ratio(pc, pc_slots); }

CollisionCounts& CollisionCounts::operator+=(const CollisionCounts& o) {
  ic += o.ic;
  oc += o.oc;
  pc += o.pc;
  ic_states += o.ic_states;
  oc_states += o.oc_states;
  pc_states += o.pc_states;
  states += o.states;
  ic_slots += o.ic_slots;
  oc_slots += o.oc_slots;
  pc_slots += o.pc_slots;
  return *this;
}

CollisionReport collision_events(const Trajectory& traj, double d_min, double d_min_pred, CountMode mode) {
  CollisionReport r;
  auto& c = r.counts;
  const auto& obstacles = traj.meta.obstacles;
  for (const auto& snap : traj.snapshots) {
    const auto& agents = snap.state.agents;
    const auto n = static_cast<std::int64_t>(agents.size());
    int ic = 0, oc = 0, pc = 0;
    for (std::size_t i = 0; i < agents.size(); ++i) {
      for (std::size_t j = i + 1; j < agents.size(); ++j)
        if ((agents[i].p - agents[j].p).norm() < d_min) ++ic;
      for (const auto& o : obstacles)
        if (o.distance(agents[i].p) < d_min) ++oc;
      if (snap.state.predator && (agents[i].p - snap.state.predator->p).norm() < d_min_pred) ++pc;
    }
    ++c.states;
    c.ic_slots += mode == CountMode::PerPair ? n * (n - 1) / 2 : 1;
    c.oc_slots += mode == CountMode::PerPair ? n * static_cast<std::int64_t>(obstacles.size()) : 1;
    if (snap.state.predator) c.pc_slots += mode == CountMode::PerPair ? n : 1;

    c.ic += mode == CountMode::PerPair ? ic : (ic > 0);
    c.oc += mode == CountMode::PerPair ? oc : (oc > 0);
    c.pc += mode == CountMode::PerPair ? pc : (pc > 0);
    c.ic_states += ic > 0;
    c.oc_states += oc > 0;
    c.pc_states += pc > 0;
    r.ic_flag.push_back(ic > 0);
    r.oc_flag.push_back(oc > 0);
    r.pc_flag.push_back(pc > 0);
  }
  return r;
}

std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

ConvergedStats converged_stats(const std::vector<MetricSeries>& runs) {
  if (runs.empty()) throw std::invalid_argument("converged_stats needs at least one run");
  std::vector<double> d, vc;
  for (const auto& s : runs) {
    if (s.size() == 0) throw std::invalid_argument("converged_stats: empty series");
    d.push_back(s.diameter.back());
    vc.push_back(s.vc.back());
  }
  ConvergedStats out;
  out.runs = static_cast<int>(runs.size());
  std::tie(out.diameter_mean, out.diameter_sd) = mean_sd(d);
  std::tie(out.vc_mean, out.vc_sd) = mean_sd(vc);
  return out;
}

DifferenceCurve series_difference(const std::vector<std::vector<double>>& a,
                                  const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("series_difference: empty set");
  std::size_t len = std::numeric_limits<std::size_t>::max();
  std::size_t longest = 0;
  for (const auto* set : {&a, &b})
    for (const auto& s : *set) {
      len = std::min(len, s.size());
      longest = std::max(longest, s.size());
    }
  DifferenceCurve out;
  out.truncated = len != longest;
  out.delta.assign(len, 0.0);
  for (std::size_t k = 0; k < len; ++k) {
    double sa = 0.0, sb = 0.0;
    for (const auto& s : a) sa += s[k];
    for (const auto& s : b) sb += s[k];
    out.delta[k] = sa / static_cast<double>(a.size()) - sb / static_cast<double>(b.size());
  }
  return out;
}

std::string EvalReport::to_json(bool with_timing) const {
  nlohmann::ordered_json j;
  j["controller"] = controller;
  j["task"] = task;
  j["plant"] = plant;
  j["runs"] = converged.runs;
  j["diameter_mean"] = converged.diameter_mean;
  j["diameter_sd"] = converged.diameter_sd;
  j["vc_mean"] = converged.vc_mean;
  j["vc_sd"] = converged.vc_sd;
  const auto& c = collisions;
  j["states"] = c.states;
  j["ic_count"] = c.ic;
  j["oc_count"] = c.oc;
  j["pc_count"] = c.pc;
  j["ic_rate"] = c.ic_rate();
  j["oc_rate"] = c.oc_rate();
  j["pc_rate"] = c.pc_rate();
  j["ic_pair_rate"] = c.ic_pair_rate();
  j["oc_pair_rate"] = c.oc_pair_rate();
  j["pc_pair_rate"] = c.pc_pair_rate();
  if (with_timing) {
    j["seconds_per_decision"] = seconds_per_decision;
    j["seconds_per_agent_decision"] = seconds_per_agent_decision;
  }
  return j.dump(2);
}

std::string EvalReport::csv_header(bool with_timing) {
  std::string h =
      "controller,task,plant,runs,diameter_mean,diameter_sd,vc_mean,vc_sd,states,"
      "ic_count,oc_count,pc_count,ic_rate,oc_rate,pc_rate,ic_pair_rate,oc_pair_rate,pc_pair_rate";
  if (with_timing) h += ",seconds_per_decision,seconds_per_agent_decision";
  return h;
}

std::string EvalReport::csv_row(bool with_timing) const {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto& c = collisions;
  os << controller << ',' << task << ',' << plant << ',' << converged.runs << ',' << converged.diameter_mean
     << ',' << converged.diameter_sd << ',' << converged.vc_mean << ',' << converged.vc_sd << ',' << c.states
     << ',' << c.ic << ',' << c.oc << ',' << c.pc << ',' << c.ic_rate() << ',' << c.oc_rate() << ','
     << c.pc_rate() << ',' << c.ic_pair_rate() << ',' << c.oc_pair_rate() << ',' << c.pc_pair_rate();
  if (with_timing) os << ',' << seconds_per_decision << ',' << seconds_per_agent_decision;
  return os.str();
}

void write_series_csv(std::ostream& out, const MetricSeries& series) {
  out << "step,diameter,vc\n" << std::setprecision(17);
  for (std::size_t k = 0; k < series.size(); ++k)
    out << k << ',' << series.diameter[k] << ',' << series.vc[k] << '\n';
}

void write_curve_csv(std::ostream& out, const std::vector<double>& curve, const std::string& column) {
  out << "step," << column << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < curve.size(); ++k) out << k << ',' << curve[k] << '\n';
}

}  // namespace flockforge

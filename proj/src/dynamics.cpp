#include "flockforge/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace flockforge {

void SimParams::validate() const {
  if (!(dt > 0)) throw ConfigError("sim.dt must be > 0");
  if (eta < 1) throw ConfigError("sim.eta must be >= 1");
  if (!(v_max > 0)) throw ConfigError("sim.v_max must be > 0");
  if (!(a_max > 0)) throw ConfigError("sim.a_max must be > 0");
  if (dim != 2 && dim != 3) throw ConfigError("sim.dim must be 2 or 3");
  if (!(sim_time >= 0)) throw ConfigError("sim.sim_time must be >= 0");
}

int SimParams::control_steps() const {
  // Small epsilon so that e.g. 100 / 0.3 does not floor below 333 through rounding.
  return static_cast<int>(std::floor(sim_time / (dt * eta) + 1e-9));
}

Matrix FlockState::positions() const {
  Matrix out(dim(), size());
  for (int i = 0; i < size(); ++i) out.col(i) = agents[i].p;
  return out;
}

Matrix FlockState::velocities() const {
  Matrix out(dim(), size());
  for (int i = 0; i < size(); ++i) out.col(i) = agents[i].v;
  return out;
}

Vec FlockState::centroid() const { return positions().rowwise().mean(); }

Vec Obstacle::closest_point(const Vec& p) const {
  Vec d = p - center;
  const double norm = d.norm();
  if (norm == 0.0) {
    d = Vec::Zero(p.size());
    d(0) = 1.0;
    return center + radius * d;
  }
  return center + radius * d / norm;
}

double Obstacle::distance(const Vec& p) const { return (p - center).norm() - radius; }

void PredatorParams::validate() const {
  if (!(f_p > 1)) throw ConfigError("predator.f_p must be > 1");
  if (!(d_start >= 0)) throw ConfigError("predator.d_start must be >= 0");
}

Vec clamp_vector(const Vec& x, double bound) {
  const double norm = x.norm();
  if (norm <= bound) return x;
  return x * (bound / norm);
}

AgentState step_agent(const AgentState& s, const Vec& a, double dt, double v_max) {
  return {s.p + dt * s.v, clamp_vector(s.v + dt * a, v_max)};
}

AgentState step_agent(const AgentState& s, const Vec& a, const SimParams& params) {
  return step_agent(s, a, params.dt, params.v_max);
}

Vec predator_control(const FlockState& flock, const SimParams& params, const PredatorParams& pp) {
  const Vec& pred = flock.predator.value().p;
  const Vec dir = flock.centroid() - pred;
  const double norm = dir.norm();
  if (norm == 0.0) return Vec::Zero(pred.size());
  return dir * (pp.f_p * params.a_max / norm);
}

std::vector<int> nearest_neighbors(const Matrix& positions, int i, int count) {
  const int n = static_cast<int>(positions.cols());
  if (count > n - 1 || count < 0) {
    throw ConfigError("nearest_neighbors: requested " + std::to_string(count) +
                      " neighbours from a flock of " + std::to_string(n));
  }
  std::vector<int> idx;
  std::vector<double> dist2(n);
  idx.reserve(n - 1);
  for (int j = 0; j < n; ++j) {
    if (j == i) continue;
    idx.push_back(j);
    dist2[j] = (positions.col(j) - positions.col(i)).squaredNorm();
  }
  auto closer = [&](int a, int b) { return dist2[a] < dist2[b] || (dist2[a] == dist2[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), closer);
  idx.resize(count);
  return idx;
}

std::vector<int> nearest_neighbors(const FlockState& flock, int i, int count) {
  return nearest_neighbors(flock.positions(), i, count);
}

bool pair_recoverable(const AgentState& a, const AgentState& b, double a_max, double d_min) {
  const Vec dp = a.p - b.p;
  const double gap = dp.norm();
  if (gap == 0.0) return false;
  // Rate at which the gap shrinks; zero when separating.
  const double closing = std::max(0.0, -dp.dot(a.v - b.v) / gap);
  return gap - closing * closing / (4.0 * a_max) > d_min;
}

bool flock_recoverable(const FlockState& flock, double a_max, double d_min) {
  for (int i = 0; i < flock.size(); ++i)
    for (int j = i + 1; j < flock.size(); ++j)
      if (!pair_recoverable(flock.agents[i], flock.agents[j], a_max, d_min)) return false;
  return true;
}

FlockState sample_initial_flock(int n, std::uint64_t seed, const SimParams& params, double d_min,
                                const InitialBox& box) {
  if (n < 1) throw ConfigError("sample_initial_flock: n must be >= 1");
  Rng rng(seed);
  for (int attempt = 0; attempt < box.rejection_cap; ++attempt) {
    FlockState flock;
    flock.agents.reserve(n);
    for (int i = 0; i < n; ++i) {
      AgentState s{Vec(params.dim), Vec(params.dim)};
      for (int d = 0; d < params.dim; ++d) s.p(d) = rng.uniform(box.pos_lo, box.pos_hi);
      for (int d = 0; d < params.dim; ++d) s.v(d) = rng.uniform(box.vel_lo, box.vel_hi);
      flock.agents.push_back(std::move(s));
    }
    if (flock_recoverable(flock, params.a_max, d_min)) return flock;
  }
  throw ConfigError("sample_initial_flock: no recoverable configuration for n=" + std::to_string(n) +
                    " within " + std::to_string(box.rejection_cap) + " attempts");
}

AgentState place_predator(const FlockState& flock, const PredatorParams& pp) {
  const int dim = flock.dim();
  Vec dir = Vec::Zero(dim);
  if (pp.bearing.size() == dim && pp.bearing.norm() > 0) {
    dir = pp.bearing.normalized();
  } else {
    dir(0) = 1.0;
  }
  return {flock.centroid() + pp.d_start * dir, Vec::Zero(dim)};
}

}  // namespace flockforge

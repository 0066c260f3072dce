#include "flockforge/costs.hpp"

#include <cmath>
#include <string>

namespace flockforge {

std::string_view task_name(Task task) {
  switch (task) {
    case Task::BasicFlocking: return "basic_flocking";
    case Task::CollisionAvoidance: return "collision_avoidance";
    case Task::ObstacleTarget: return "obstacle_target";
    case Task::PredatorAvoidance: return "predator_avoidance";
  }
  return "unknown";
}

Task parse_task(std::string_view name) {
  for (Task t : {Task::BasicFlocking, Task::CollisionAvoidance, Task::ObstacleTarget,
                 Task::PredatorAvoidance}) {
    if (task_name(t) == name) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

bool task_uses_penalty(Task task) { return task != Task::BasicFlocking; }

void CostSpec::validate() const {
  if (omega < 0 || rho < 0 || omega_t < 0)
    throw ConfigError("cost weights must be >= 0");
  if (task_uses_penalty(task) && !(rho > 0)) throw ConfigError("cost.rho must be > 0 for penalty tasks");
  if (d_min_pred < d_min) throw ConfigError("cost.d_min_pred must be >= cost.d_min");
  if (!(r > 0)) throw ConfigError("cost.r must be > 0");
  if ((task == Task::ObstacleTarget) != target.has_value())
    throw ConfigError("cost.target must be set exactly when task is obstacle_target");
  for (const auto& o : obstacles)
    if (!(o.radius > 0)) throw ConfigError("obstacle radius must be > 0");
}

double CostValue::weighted_sum(const CostSpec& spec, double lambda) const {
  return cohesion + spec.omega * separation + spec.rho * penalty + spec.omega_t * target +
         lambda * effort;
}

namespace {

// Penalty rows are accumulated as a sum of squared violations; the gradient
// helpers add `scale * c_k * grad(c_k)` for every active row.

double collision_sq(const Matrix& P, double d_min) {
  double sum = 0.0;
  const auto n = P.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double c = d_min - (P.col(i) - P.col(j)).norm();
      if (c > 0) sum += c * c;
    }
  }
  return sum;
}

void collision_grad(const Matrix& P, double d_min, double scale, Matrix& G) {
  const auto n = P.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Vec dp = P.col(i) - P.col(j);
      const double dist = dp.norm();
      const double c = d_min - dist;
      if (c <= 0 || dist == 0.0) continue;
      const Vec g = (scale * c / dist) * dp;
      G.col(i) -= g;
      G.col(j) += g;
    }
  }
}

double obstacle_sq(const Matrix& P, const std::vector<Obstacle>& obstacles, double d_min) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < P.cols(); ++i) {
    for (const auto& o : obstacles) {
      const double c = d_min - o.distance(P.col(i));
      if (c > 0) sum += c * c;
    }
  }
  return sum;
}

void obstacle_grad(const Matrix& P, const std::vector<Obstacle>& obstacles, double d_min, double scale,
                   Matrix& G) {
  for (Eigen::Index i = 0; i < P.cols(); ++i) {
    for (const auto& o : obstacles) {
      const Vec dp = P.col(i) - o.center;
      const double dist = dp.norm();
      const double c = d_min - (dist - o.radius);
      if (c <= 0 || dist == 0.0) continue;
      G.col(i) -= (scale * c / dist) * dp;
    }
  }
}

double predator_sq(const Matrix& P, const Vec& pred, double d_min_pred) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < P.cols(); ++i) {
    const double c = d_min_pred - (P.col(i) - pred).norm();
    if (c > 0) sum += c * c;
  }
  return sum;
}

void predator_grad(const Matrix& P, const Vec& pred, double d_min_pred, double scale, Matrix& G,
                   Vec& Gpred) {
  for (Eigen::Index i = 0; i < P.cols(); ++i) {
    const Vec dp = P.col(i) - pred;
    const double dist = dp.norm();
    const double c = d_min_pred - dist;
    if (c <= 0 || dist == 0.0) continue;
    const Vec g = (scale * c / dist) * dp;
    G.col(i) -= g;
    Gpred += g;
  }
}

void require_pairs(const Matrix& P, const char* what) {
  if (P.cols() < 2) throw std::invalid_argument(std::string(what) + " needs at least two agents");
}

const Vec& require_predator(const Vec* predator) {
  if (predator == nullptr) throw std::invalid_argument("predator avoidance cost needs a predator position");
  return *predator;
}

}  // namespace

double cohesion_cost(const Matrix& P) {
  require_pairs(P, "cohesion_cost");
  const double n = static_cast<double>(P.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < P.cols(); ++i)
    for (Eigen::Index j = i + 1; j < P.cols(); ++j) sum += (P.col(i) - P.col(j)).squaredNorm();
  return 2.0 / (n * (n - 1.0)) * sum;
}

Matrix cohesion_gradient(const Matrix& P) {
  require_pairs(P, "cohesion_gradient");
  const double n = static_cast<double>(P.cols());
  // d/dp_i sum_{j<k} |p_jk|^2 = 2 (n p_i - sum_j p_j)
  const Vec total = P.rowwise().sum();
  Matrix G = (n * P).colwise() - total;
  return (4.0 / (n * (n - 1.0))) * G;
}

double separation_cost(const Matrix& P, double r) {
  require_pairs(P, "separation_cost");
  const double r2 = r * r;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < P.cols(); ++i) {
    for (Eigen::Index j = i + 1; j < P.cols(); ++j) {
      const double d2 = (P.col(i) - P.col(j)).squaredNorm();
      if (d2 == 0.0) {
        throw CoincidentAgentsError("separation_cost: agents " + std::to_string(i) + " and " +
                                    std::to_string(j) + " coincide");
      }
      if (d2 < r2) sum += 1.0 / d2;
    }
  }
  return sum;
}

Matrix separation_gradient(const Matrix& P, double r) {
  require_pairs(P, "separation_gradient");
  const double r2 = r * r;
  Matrix G = Matrix::Zero(P.rows(), P.cols());
  for (Eigen::Index i = 0; i < P.cols(); ++i) {
    for (Eigen::Index j = i + 1; j < P.cols(); ++j) {
      const Vec dp = P.col(i) - P.col(j);
      const double d2 = dp.squaredNorm();
      if (d2 == 0.0) throw CoincidentAgentsError("separation_gradient: coincident agents");
      if (d2 >= r2) continue;
      const Vec g = (-2.0 / (d2 * d2)) * dp;
      G.col(i) += g;
      G.col(j) -= g;
    }
  }
  return G;
}

double collision_penalty(const Matrix& P, double d_min) { return std::sqrt(collision_sq(P, d_min)); }

double obstacle_penalty(const Matrix& P, const std::vector<Obstacle>& obstacles, double d_min) {
  return std::sqrt(obstacle_sq(P, obstacles, d_min));
}

double target_cost(const Matrix& P, const Vec& target) {
  return (P.colwise() - target).colwise().squaredNorm().sum() / static_cast<double>(P.cols());
}

Matrix target_gradient(const Matrix& P, const Vec& target) {
  return (2.0 / static_cast<double>(P.cols())) * (P.colwise() - target);
}

double predator_penalty(const Matrix& P, const Vec& predator, double d_min_pred) {
  return std::sqrt(predator_sq(P, predator, d_min_pred));
}

CostValue task_cost(const Matrix& P, const CostSpec& spec, const Vec* predator) {
  CostValue v;
  v.cohesion = cohesion_cost(P);
  switch (spec.task) {
    case Task::BasicFlocking:
      v.separation = separation_cost(P, spec.r);
      break;
    case Task::CollisionAvoidance:
      v.penalty = std::sqrt(collision_sq(P, spec.d_min));
      break;
    case Task::ObstacleTarget:
      v.target = target_cost(P, spec.target.value());
      v.penalty = std::sqrt(collision_sq(P, spec.d_min) + obstacle_sq(P, spec.obstacles, spec.d_min));
      break;
    case Task::PredatorAvoidance:
      v.penalty = std::sqrt(collision_sq(P, spec.d_min) +
                            predator_sq(P, require_predator(predator), spec.d_min_pred));
      break;
  }
  v.total = v.weighted_sum(spec);
  return v;
}

CostGradient task_cost_gradient(const Matrix& P, const CostSpec& spec, const Vec* predator) {
  CostGradient out;
  out.positions = cohesion_gradient(P);
  Matrix& G = out.positions;
  switch (spec.task) {
    case Task::BasicFlocking:
      G += spec.omega * separation_gradient(P, spec.r);
      break;
    case Task::CollisionAvoidance: {
      const double norm = std::sqrt(collision_sq(P, spec.d_min));
      if (norm > 0) collision_grad(P, spec.d_min, spec.rho / norm, G);
      break;
    }
    case Task::ObstacleTarget: {
      G += spec.omega_t * target_gradient(P, spec.target.value());
      const double norm =
          std::sqrt(collision_sq(P, spec.d_min) + obstacle_sq(P, spec.obstacles, spec.d_min));
      if (norm > 0) {
        collision_grad(P, spec.d_min, spec.rho / norm, G);
        obstacle_grad(P, spec.obstacles, spec.d_min, spec.rho / norm, G);
      }
      break;
    }
    case Task::PredatorAvoidance: {
      const Vec& pred = require_predator(predator);
      out.predator = Vec::Zero(pred.size());
      const double norm =
          std::sqrt(collision_sq(P, spec.d_min) + predator_sq(P, pred, spec.d_min_pred));
      if (norm > 0) {
        collision_grad(P, spec.d_min, spec.rho / norm, G);
        predator_grad(P, pred, spec.d_min_pred, spec.rho / norm, G, out.predator);
      }
      break;
    }
  }
  return out;
}

LocalCost local_task_cost(const Vec& self, const Matrix& neighbors, const CostSpec& spec,
                          const Vec* predator) {
  const auto count = neighbors.cols();
  LocalCost out{0.0, Vec::Zero(self.size())};
  if (count > 0) {
    const Matrix diff = (-neighbors).colwise() + self;  // p_i - p_j per column
    const double inv_n = 1.0 / static_cast<double>(count);
    out.value += inv_n * diff.colwise().squaredNorm().sum();
    out.gradient += 2.0 * inv_n * diff.rowwise().sum();
    if (spec.task == Task::BasicFlocking) {
      for (Eigen::Index j = 0; j < count; ++j) {
        const double d2 = diff.col(j).squaredNorm();
        if (d2 == 0.0) throw CoincidentAgentsError("local_task_cost: agent coincides with a neighbour");
        out.value += spec.omega / d2;
        out.gradient -= (2.0 * spec.omega / (d2 * d2)) * diff.col(j);
      }
    }
  }
  if (spec.task == Task::BasicFlocking) return out;

  // Violation rows that involve this agent: (direction of increasing violation, magnitude).
  std::vector<std::pair<Vec, double>> rows;
  auto add_row = [&](const Vec& away, double clearance, double limit) {
    const double c = limit - clearance;
    if (c <= 0) return;
    const double dist = away.norm();
    rows.emplace_back(dist > 0 ? Vec(-away / dist) : Vec(Vec::Zero(self.size())), c);
  };
  for (Eigen::Index j = 0; j < count; ++j) {
    const Vec away = self - neighbors.col(j);
    add_row(away, away.norm(), spec.d_min);
  }
  if (spec.task == Task::ObstacleTarget) {
    const Vec& g = spec.target.value();
    out.value += spec.omega_t * (self - g).squaredNorm();
    out.gradient += 2.0 * spec.omega_t * (self - g);
    for (const auto& o : spec.obstacles) {
      const Vec away = self - o.center;
      add_row(away, o.distance(self), spec.d_min);
    }
  }
  if (spec.task == Task::PredatorAvoidance) {
    const Vec away = self - require_predator(predator);
    add_row(away, away.norm(), spec.d_min_pred);
  }
  double sq = 0.0;
  for (const auto& row : rows) sq += row.second * row.second;
  if (sq > 0) {
    const double norm = std::sqrt(sq);
    out.value += spec.rho * norm;
    for (const auto& [dir, c] : rows) out.gradient += (spec.rho * c / norm) * dir;
  }
  return out;
}

}  // namespace flockforge

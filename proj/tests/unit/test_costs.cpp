#include <doctest.h>

#include <cmath>

#include "flockforge/costs.hpp"

using namespace flockforge;

namespace {

Vec v2(double x, double y) { return (Vec(2) << x, y).finished(); }

Matrix cols(std::initializer_list<Vec> ps) {
  Matrix m(2, static_cast<Eigen::Index>(ps.size()));
  Eigen::Index i = 0;
  for (const auto& p : ps) m.col(i++) = p;
  return m;
}

Matrix random_positions(Rng& rng, int n, double half) {
  Matrix P(2, n);
  for (Eigen::Index k = 0; k < P.size(); ++k) P(k) = rng.uniform(-half, half);
  return P;
}

CostSpec spec_for(Task task) {
  CostSpec s;
  s.task = task;
  s.omega = 30;
  s.rho = 1e5;
  s.omega_t = 1.0;
  s.r = 3.0;
  if (task == Task::ObstacleTarget) {
    s.target = v2(4, -1);
    s.obstacles = {{v2(0.5, 0.5), 1.0}, {v2(-2, 1), 0.7}};
  }
  return s;
}

/// Smallest distance from any active row to its kink; used to skip configs
/// where central differences straddle a non-differentiable point.
double kink_margin(const Matrix& P, const CostSpec& s, const Vec* pred) {
  double m = 1e300;
  for (Eigen::Index i = 0; i < P.cols(); ++i) {
    for (Eigen::Index j = i + 1; j < P.cols(); ++j) {
      const double d = (P.col(i) - P.col(j)).norm();
      m = std::min(m, std::abs(d - s.d_min));
      m = std::min(m, std::abs(d - s.r));
    }
    for (const auto& o : s.obstacles) m = std::min(m, std::abs(o.distance(P.col(i)) - s.d_min));
    if (pred) m = std::min(m, std::abs((P.col(i) - *pred).norm() - s.d_min_pred));
  }
  return m;
}

// Independent oracle: central differences on task_cost().total.
Matrix fd_gradient(const Matrix& P, const CostSpec& s, const Vec* pred, double h = 1e-5) {
  Matrix G(P.rows(), P.cols());
  Matrix probe = P;
  for (Eigen::Index k = 0; k < P.size(); ++k) {
    probe(k) = P(k) + h;
    const double up = task_cost(probe, s, pred).total;
    probe(k) = P(k) - h;
    const double down = task_cost(probe, s, pred).total;
    probe(k) = P(k);
    G(k) = (up - down) / (2 * h);
  }
  return G;
}

}  // namespace

TEST_CASE("cohesion_cost examples") {
  CHECK(cohesion_cost(cols({v2(0, 0), v2(3, 0), v2(0, 4)})) == doctest::Approx(50.0 / 3.0));
  CHECK(cohesion_cost(cols({v2(1, 1), v2(1, 1)})) == 0.0);
  CHECK(cohesion_cost(cols({v2(0, 0), v2(1, 0)})) == doctest::Approx(1.0));
  CHECK_THROWS(cohesion_cost(cols({v2(0, 0)})));
}

TEST_CASE("separation_cost examples") {
  CHECK(separation_cost(cols({v2(0, 0), v2(3, 0), v2(0, 4)}), 10) ==
        doctest::Approx(1.0 / 9 + 1.0 / 16 + 1.0 / 25));
  CHECK(separation_cost(cols({v2(0, 0), v2(3, 0)}), 2) == 0.0);
  CHECK(separation_cost(cols({v2(0, 0), v2(1, 0)}), 2) == doctest::Approx(1.0));
  CHECK_THROWS_AS(separation_cost(cols({v2(1, 0), v2(1, 0)}), 2), CoincidentAgentsError);
}

TEST_CASE("collision_penalty examples") {
  CHECK(collision_penalty(cols({v2(0, 0), v2(1, 0), v2(10, 0)}), 2) == doctest::Approx(1.0));
  CHECK(collision_penalty(cols({v2(0, 0), v2(5, 0), v2(10, 0)}), 2) == 0.0);
  CHECK(collision_penalty(cols({v2(0, 0), v2(1, 0), v2(2, 0)}), 2) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("obstacle_penalty examples") {
  const std::vector<Obstacle> unit{{v2(0, 0), 1.0}};
  CHECK(obstacle_penalty(cols({v2(5, 0)}), unit, 2) == 0.0);
  CHECK(obstacle_penalty(cols({v2(2, 0)}), unit, 2) == doctest::Approx(1.0));
  CHECK(obstacle_penalty(cols({v2(2, 0), v2(0, -2)}), unit, 2) == doctest::Approx(std::sqrt(2.0)));
  // Penetration grows the violation beyond d_min.
  CHECK(obstacle_penalty(cols({v2(0.5, 0)}), unit, 2) == doctest::Approx(2.5));
}

TEST_CASE("target_cost examples") {
  CHECK(target_cost(cols({v2(1, 0), v2(1, 0)}), v2(1, 0)) == 0.0);
  CHECK(target_cost(cols({v2(0, 0), v2(2, 0)}), v2(1, 0)) == doctest::Approx(1.0));
  CHECK(target_cost(cols({v2(3, 4)}), v2(0, 0)) == doctest::Approx(25.0));
}

TEST_CASE("predator_penalty examples") {
  const Vec pred = v2(0, 0);
  CHECK(predator_penalty(cols({v2(5, 0), v2(0, 4)}), pred, 4) == 0.0);
  CHECK(predator_penalty(cols({v2(3, 0), v2(0, 10)}), pred, 4) == doctest::Approx(1.0));
  CHECK(predator_penalty(cols({v2(3, 0), v2(0, 2)}), pred, 4) == doctest::Approx(std::sqrt(5.0)));
}

TEST_CASE("task_cost compositions") {
  CostSpec s;
  s.omega = 30;
  s.r = 2;
  const auto j1 = task_cost(cols({v2(0, 0), v2(1, 0)}), s);
  CHECK(j1.total == doctest::Approx(31.0));

  s.task = Task::CollisionAvoidance;
  const Matrix spread = cols({v2(0, 0), v2(3, 0), v2(0, 4)});
  CHECK(task_cost(spread, s).total == doctest::Approx(cohesion_cost(spread)));
}

TEST_CASE("J3 example: J_CA=3, J_OA=4, rho=10 adds 50") {
  CostSpec s;
  s.task = Task::ObstacleTarget;
  s.rho = 10;
  s.d_min = 4;
  s.omega_t = 2;
  s.target = v2(3, 3);
  // Pair at distance 1 violates d_min by 3. A far obstacle centred between
  // the agents leaves each with violation 2*sqrt(2), so J_OA = 4.
  const Matrix P = cols({v2(0, 0), v2(1, 0)});
  const double clearance = 4.0 - 2.0 * std::sqrt(2.0);
  s.obstacles = {{v2(0.5, -10), std::sqrt(100.25) - clearance}};
  CHECK(collision_penalty(P, s.d_min) == doctest::Approx(3.0));
  CHECK(obstacle_penalty(P, s.obstacles, s.d_min) == doctest::Approx(4.0));
  const auto v = task_cost(P, s);
  const double c = cohesion_cost(P);
  const double t = s.omega_t * target_cost(P, *s.target);
  CHECK(v.total == doctest::Approx(c + t + 50.0));
  CHECK(v.total == doctest::Approx(v.weighted_sum(s)));
}

TEST_CASE("gradients match central finite differences for every task") {
  Rng rng(2024);
  for (Task task : {Task::BasicFlocking, Task::CollisionAvoidance, Task::ObstacleTarget,
                    Task::PredatorAvoidance}) {
    CAPTURE(task_name(task));
    const CostSpec s = spec_for(task);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix P = random_positions(rng, 5, 3.0);
      const Vec pred = v2(rng.uniform(-3, 3), rng.uniform(-3, 3));
      const Vec* pp = task == Task::PredatorAvoidance ? &pred : nullptr;
      if (kink_margin(P, s, pp) < 1e-4) continue;
      const Matrix analytic = task_cost_gradient(P, s, pp).positions;
      const Matrix numeric = fd_gradient(P, s, pp);
      const double rel = (analytic - numeric).norm() / std::max(numeric.norm(), 1e-8);
      CHECK(rel < 1e-4);
      ++checked;
    }
    CHECK(checked >= 90);
  }
}

TEST_CASE("gradient with inactive penalty is the smooth part only") {
  CostSpec s = spec_for(Task::CollisionAvoidance);
  const Matrix P = cols({v2(0, 0), v2(5, 0), v2(0, 7)});
  CHECK(task_cost_gradient(P, s).positions.isApprox(cohesion_gradient(P)));
}

TEST_CASE("two symmetric agents get equal and opposite gradients") {
  for (Task task : {Task::BasicFlocking, Task::CollisionAvoidance}) {
    CostSpec s = spec_for(task);
    const Matrix P = cols({v2(-0.7, 0.2), v2(0.7, -0.2)});
    const Matrix G = task_cost_gradient(P, s).positions;
    CHECK((G.col(0) + G.col(1)).norm() < 1e-9 * G.norm());
  }
}

TEST_CASE("costs are permutation invariant, nonnegative and translation invariant where expected") {
  Rng rng(99);
  for (Task task : {Task::BasicFlocking, Task::CollisionAvoidance, Task::ObstacleTarget,
                    Task::PredatorAvoidance}) {
    const CostSpec s = spec_for(task);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix P = random_positions(rng, 6, 4.0);
      const Vec pred = v2(1, 1);
      const Vec* pp = task == Task::PredatorAvoidance ? &pred : nullptr;
      const double base = task_cost(P, s, pp).total;
      CHECK(base >= 0.0);
      Matrix Q = P;
      Q.col(0).swap(Q.col(4));
      Q.col(2).swap(Q.col(5));
      CHECK(task_cost(Q, s, pp).total == doctest::Approx(base).epsilon(1e-12));
      if (task == Task::BasicFlocking || task == Task::CollisionAvoidance) {
        const Matrix shifted = P.colwise() + v2(17.5, -3.25);
        CHECK(task_cost(shifted, s).total == doctest::Approx(base).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("local cost gradient matches finite differences") {
  Rng rng(5);
  for (Task task : {Task::BasicFlocking, Task::CollisionAvoidance, Task::ObstacleTarget,
                    Task::PredatorAvoidance}) {
    const CostSpec s = spec_for(task);
    for (int trial = 0; trial < 30; ++trial) {
      const Vec self = v2(rng.uniform(-2, 2), rng.uniform(-2, 2));
      const Matrix nb = random_positions(rng, 4, 3.0);
      const Vec pred = v2(rng.uniform(-3, 3), rng.uniform(-3, 3));
      const Vec* pp = task == Task::PredatorAvoidance ? &pred : nullptr;
      const auto lc = local_task_cost(self, nb, s, pp);
      Vec fd(2);
      for (int k = 0; k < 2; ++k) {
        Vec a = self, b = self;
        a(k) += 1e-6;
        b(k) -= 1e-6;
        fd(k) = (local_task_cost(a, nb, s, pp).value - local_task_cost(b, nb, s, pp).value) / 2e-6;
      }
      CHECK((lc.gradient - fd).norm() <= 1e-4 * std::max(1.0, fd.norm()));
    }
  }
}

TEST_CASE("exact penalty: large rho recovers the constrained minimiser") {
  // min_x |x|^2 (cohesion of agents at 0 and (x,0)) subject to |x| >= 2.
  // The multiplier at the constrained optimum is 2 * 2 = 4.
  auto penalised = [](double x, double rho) {
    CostSpec s;
    s.task = Task::CollisionAvoidance;
    s.rho = rho;
    s.d_min = 2.0;
    return task_cost(cols({v2(0, 0), v2(x, 0)}), s).total;
  };
  auto brute_force = [&](double rho) {
    double lo = 0.0, hi = 4.0, best = 0.0;
    for (int level = 0; level < 8; ++level) {
      const int samples = 1000;
      double best_cost = 1e300;
      for (int k = 0; k <= samples; ++k) {
        const double x = lo + (hi - lo) * k / samples;
        const double c = penalised(x, rho);
        if (c < best_cost) {
          best_cost = c;
          best = x;
        }
      }
      const double cell = (hi - lo) / samples;
      lo = std::max(0.0, best - cell);
      hi = best + cell;
    }
    return best;
  };
  CHECK(2.0 - brute_force(1e5) <= 1e-6);
  // Below the multiplier the penalty is not exact and the minimiser violates.
  CHECK(brute_force(1.0) == doctest::Approx(0.5).epsilon(1e-6));
}

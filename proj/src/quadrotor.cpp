#include "flockforge/quadrotor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

namespace flockforge {

void QuadParams::validate() const {
  for (double x : {m, g, Ixx, Iyy, Izz, Jr, L, b, d}) {
    if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError("quadrotor parameters must be positive");
  }
}

QuadState quad_at(const Vec& p, const Vec& v) {
  if (p.size() < 2 || p.size() > 3 || v.size() != p.size()) throw ConfigError("quad_at needs 2D or 3D p and v");
  QuadState s = QuadState::Zero();
  s[qs::X] = p[0];
  s[qs::Y] = p[1];
  s[qs::VX] = v[0];
  s[qs::VY] = v[1];
  if (p.size() == 3) {
    s[qs::Z] = p[2];
    s[qs::VZ] = v[2];
  }
  return s;
}

Vec quad_position(const QuadState& s, int dim) {
  Vec p(dim);
  p[0] = s[qs::X];
  p[1] = s[qs::Y];
  if (dim == 3) p[2] = s[qs::Z];
  return p;
}

Vec quad_velocity(const QuadState& s, int dim) {
  Vec v(dim);
  v[0] = s[qs::VX];
  v[1] = s[qs::VY];
  if (dim == 3) v[2] = s[qs::VZ];
  return v;
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  if (a > -pi && a <= pi) return a;
  double w = std::fmod(a + pi, 2.0 * pi);
  if (w <= 0.0) w += 2.0 * pi;
  return w - pi;
}

QuadState quad_derivative(const QuadState& s, const QuadInput& u, const QuadParams& P) {
  const double phi = s[qs::PHI], theta = s[qs::THETA], psi = s[qs::PSI];
  const double dphi = s[qs::DPHI], dtheta = s[qs::DTHETA], dpsi = s[qs::DPSI];
  const double cphi = std::cos(phi), sphi = std::sin(phi);
  const double cth = std::cos(theta), sth = std::sin(theta);
  const double cpsi = std::cos(psi), spsi = std::sin(psi);
  const double t = u.u1 / P.m;

  QuadState ds;
  ds[qs::X] = s[qs::VX];
  ds[qs::Y] = s[qs::VY];
  ds[qs::Z] = s[qs::VZ];
  ds[qs::VX] = (cphi * sth * cpsi + sphi * spsi) * t;
  ds[qs::VY] = (cphi * sth * spsi - sphi * cpsi) * t;
  // Written as u1/m - g so that hover is an exact zero.
  ds[qs::VZ] = cphi * cth * t - P.g;
  ds[qs::PHI] = dphi;
  ds[qs::THETA] = dtheta;
  ds[qs::PSI] = dpsi;
  ds[qs::DPHI] = dtheta * dpsi * (P.Iyy - P.Izz) / P.Ixx - P.Jr / P.Ixx * dtheta * u.omega_r + u.u2 / P.Ixx;
  ds[qs::DTHETA] = dpsi * dphi * (P.Izz - P.Ixx) / P.Iyy + P.Jr / P.Iyy * dphi * u.omega_r + u.u3 / P.Iyy;
  ds[qs::DPSI] = dphi * dtheta * (P.Ixx - P.Iyy) / P.Izz + u.u4 / P.Izz;
  return ds;
}

QuadInput rotor_mixing_thrust(const std::array<double, 4>& F, const QuadParams& P) {
  QuadInput u;
  u.u1 = F[0] + F[1] + F[2] + F[3];
  u.u2 = P.L * (F[3] - F[1]);
  u.u3 = P.L * (F[2] - F[0]);
  const double k = P.d / P.b;
  u.u4 = k * (-F[0] + F[1] - F[2] + F[3]);
  return u;
}

QuadInput rotor_mixing_speeds(const std::array<double, 4>& omega, const QuadParams& P) {
  std::array<double, 4> F;
  for (int i = 0; i < 4; ++i) {
    if (omega[i] < 0.0) throw ConfigError("rotor speeds must be nonnegative");
    F[i] = P.b * omega[i] * omega[i];
  }
  QuadInput u = rotor_mixing_thrust(F, P);
  const auto Q = [&](int i) { return P.d * omega[i] * omega[i]; };
  u.u4 = -Q(0) + Q(1) - Q(2) + Q(3);
  u.omega_r = omega[0] + omega[1] + omega[2] + omega[3];
  return u;
}

std::array<double, 4> rotor_speeds(const QuadInput& u, const QuadParams& P) {
  const double a = u.u2 / P.L;          // F4 - F2
  const double b = u.u3 / P.L;          // F3 - F1
  const double c = u.u4 * P.b / P.d;    // -F1 + F2 - F3 + F4
  const double odd = 0.5 * (u.u1 - c);  // F1 + F3
  const double even = 0.5 * (u.u1 + c); // F2 + F4
  const std::array<double, 4> F = {0.5 * (odd - b), 0.5 * (even - a), 0.5 * (odd + b), 0.5 * (even + a)};
  std::array<double, 4> omega;
  for (int i = 0; i < 4; ++i) omega[i] = std::sqrt(std::max(F[i], 0.0) / P.b);
  return omega;
}

QuadState integrate_quad(const QuadState& s, const QuadInput& u, double h, const QuadParams& P) {
  if (!(h > 0.0)) throw ConfigError("integration step must be positive");
  const QuadState k1 = quad_derivative(s, u, P);
  const QuadState k2 = quad_derivative(s + 0.5 * h * k1, u, P);
  const QuadState k3 = quad_derivative(s + 0.5 * h * k2, u, P);
  const QuadState k4 = quad_derivative(s + h * k3, u, P);
  QuadState next = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw DivergenceError("quadrotor state became non-finite");
  next[qs::PHI] = wrap_angle(next[qs::PHI]);
  next[qs::THETA] = wrap_angle(next[qs::THETA]);
  next[qs::PSI] = wrap_angle(next[qs::PSI]);
  return next;
}

void PidGains::validate() const {
  for (double x : {kp, ki, kd, yaw_kp, yaw_ki, yaw_kd, integral_limit}) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("PID gains must be nonnegative");
  }
  if (!(max_tilt > 0.0 && max_tilt < std::numbers::pi / 2)) throw ConfigError("max_tilt must lie in (0, pi/2)");
  if (!(u1_max > 0.0)) throw ConfigError("u1_max must be positive");
}

AccelerationTracker::AccelerationTracker(const QuadParams& params, const PidGains& gains)
    : params_(params), gains_(gains) {
  params_.validate();
  gains_.validate();
}

void AccelerationTracker::reset() { integral_ = {}; }

namespace {

Eigen::Vector3d desired_total(const Vec& a_cmd, double g) {
  if (a_cmd.size() != 2 && a_cmd.size() != 3) throw ConfigError("acceleration command must be 2D or 3D");
  Eigen::Vector3d a(a_cmd[0], a_cmd[1], a_cmd.size() == 3 ? a_cmd[2] : 0.0);
  a.z() += g;
  return a;
}

}  // namespace

double AccelerationTracker::thrust(const Vec& a_cmd) const {
  const Eigen::Vector3d a = desired_total(a_cmd, params_.g);
  return std::clamp(params_.m * a.norm(), 0.0, gains_.u1_max);
}

std::array<double, 2> AccelerationTracker::attitude_setpoint(const Vec& a_cmd, double psi) const {
  const Eigen::Vector3d a = desired_total(a_cmd, params_.g);
  const double n = a.norm();
  if (n == 0.0) return {0.0, 0.0};
  const double c = std::cos(psi), s = std::sin(psi);
  // Inverts the translational rows at thrust |a|: forward component sets pitch,
  // the remaining lateral component sets roll.
  const double theta = std::atan2(a.x() * c + a.y() * s, a.z());
  const double phi = std::asin(std::clamp((a.x() * s - a.y() * c) / n, -1.0, 1.0));
  const double lim = gains_.max_tilt;
  return {std::clamp(phi, -lim, lim), std::clamp(theta, -lim, lim)};
}

QuadInput AccelerationTracker::update(const QuadState& s, const Vec& a_cmd, double h) {
  const auto [phi_des, theta_des] = attitude_setpoint(a_cmd, s[qs::PSI]);
  const std::array<double, 3> err = {wrap_angle(phi_des - s[qs::PHI]), wrap_angle(theta_des - s[qs::THETA]),
                                     wrap_angle(0.0 - s[qs::PSI])};
  const std::array<double, 3> rate = {s[qs::DPHI], s[qs::DTHETA], s[qs::DPSI]};
  const double lim = gains_.integral_limit;
  for (int j = 0; j < 3; ++j) integral_[j] = std::clamp(integral_[j] + err[j] * h, -lim, lim);

  // Derivative on measurement: setpoints jump each control step.
  auto pid = [&](int j, double kp, double ki, double kd) { return kp * err[j] + ki * integral_[j] - kd * rate[j]; };
  QuadInput u;
  u.u1 = thrust(a_cmd);
  u.u2 = params_.Ixx * pid(0, gains_.kp, gains_.ki, gains_.kd);
  u.u3 = params_.Iyy * pid(1, gains_.kp, gains_.ki, gains_.kd);
  u.u4 = params_.Izz * pid(2, gains_.yaw_kp, gains_.yaw_ki, gains_.yaw_kd);
  return u;
}

void QuadLoopConfig::validate() const {
  params.validate();
  gains.validate();
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
}

Trajectory quad_flock_loop(const FlockState& initial, Controller& controller, const SimParams& sim,
                           const QuadLoopConfig& config, LoopStats* stats) {
  using clock = std::chrono::steady_clock;
  sim.validate();
  config.validate();
  if (initial.predator) throw ConfigError("the quadrotor harness runs basic flocking only");
  const int n = initial.size();
  const int dim = initial.dim();

  std::vector<QuadState> quads(n);
  for (int i = 0; i < n; ++i) quads[i] = quad_at(initial.agents[i].p, initial.agents[i].v);
  std::vector<AccelerationTracker> trackers(n, AccelerationTracker(config.params, config.gains));

  auto read_off = [&](int time_step) {
    FlockState f;
    f.time_step = time_step;
    f.agents.resize(n);
    for (int i = 0; i < n; ++i) f.agents[i] = {quad_position(quads[i], dim), quad_velocity(quads[i], dim)};
    return f;
  };
  auto quad_block = [&] {
    Matrix Q(12, n);
    for (int i = 0; i < n; ++i) Q.col(i) = quads[i];
    return Q;
  };

  Trajectory traj;
  traj.meta.controller = controller.name();
  traj.meta.plant = "quad";
  traj.meta.sim = sim;
  controller.reset();
  const int steps = sim.control_steps();
  const double h = sim.dt / config.substeps;
  const int inner = sim.eta * config.substeps;
  traj.snapshots.reserve(steps + 1);
  traj.snapshots.push_back({read_off(initial.time_step), Matrix(), quad_block()});
  // The recorded initial state is the sampled one (quad_at is lossless for it).
  traj.snapshots.back().state = initial;

  for (int k = 0; k < steps; ++k) {
    const FlockState& state = traj.snapshots.back().state;
    const auto t0 = clock::now();
    Matrix accel = controller.act(state);
    const auto t1 = clock::now();
    if (stats) {
      stats->decision_seconds += std::chrono::duration<double>(t1 - t0).count();
      stats->decisions += 1;
      stats->agent_decisions += n;
    }
    if (!accel.allFinite()) throw DivergenceError(controller.name() + " produced a non-finite action");
    for (int i = 0; i < n; ++i) accel.col(i) = clamp_vector(accel.col(i), sim.a_max);

    for (int i = 0; i < n; ++i) {
      const Vec a = accel.col(i);
      for (int s = 0; s < inner; ++s) {
        QuadInput u = trackers[i].update(quads[i], a, h);
        if (config.gyroscopic) {
          const auto omega = rotor_speeds(u, config.params);
          u.omega_r = omega[0] + omega[1] + omega[2] + omega[3];
        }
        quads[i] = integrate_quad(quads[i], u, h, config.params);
      }
    }
    traj.snapshots.back().accel = std::move(accel);
    traj.snapshots.push_back({read_off(state.time_step + sim.eta), Matrix(), quad_block()});
  }
  return traj;
}

}  // namespace flockforge

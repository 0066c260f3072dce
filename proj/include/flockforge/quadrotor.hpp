#pragma once

#include <array>
#include <vector>

#include "flockforge/dynamics.hpp"
#include "flockforge/mpc.hpp"
#include "flockforge/trajectory.hpp"

namespace flockforge {

struct QuadParams {
  double m = 0.650;
  double g = 9.81;
  double Ixx = 7.5e-3;
  double Iyy = 7.5e-3;
  double Izz = 1.3e-2;
  double Jr = 6e-5;
  double L = 0.23;
  double b = 3.13e-5;  // thrust factor, F = b * Omega^2
  double d = 7.5e-7;   // drag factor, Q = d * Omega^2

  void validate() const;
};

/// [x xd y yd z zd phi phid theta thetad psi psid]
using QuadState = Eigen::Matrix<double, 12, 1>;

namespace qs {
enum : int { X, VX, Y, VY, Z, VZ, PHI, DPHI, THETA, DTHETA, PSI, DPSI };
}

struct QuadInput {
  double u1 = 0.0;  // total thrust
  double u2 = 0.0;  // roll moment
  double u3 = 0.0;  // pitch moment
  double u4 = 0.0;  // yaw moment
  double omega_r = 0.0;  // total rotor speed, 0 when rotors are not tracked
};

/// Level, at rest, at position p (2 or 3 components; missing z is 0).
QuadState quad_at(const Vec& p, const Vec& v);
Vec quad_position(const QuadState& s, int dim = 3);
Vec quad_velocity(const QuadState& s, int dim = 3);

/// Wraps to (-pi, pi].
double wrap_angle(double a);

QuadState quad_derivative(const QuadState& s, const QuadInput& u, const QuadParams& params);

/// Per-rotor thrusts F1..F4; drag torques follow as Q = (d/b) F.
QuadInput rotor_mixing_thrust(const std::array<double, 4>& thrust, const QuadParams& params);
/// Per-rotor speeds Omega1..Omega4; also fills omega_r.
QuadInput rotor_mixing_speeds(const std::array<double, 4>& omega, const QuadParams& params);
/// Inverse of the mixing, with each rotor's thrust floored at zero.
std::array<double, 4> rotor_speeds(const QuadInput& u, const QuadParams& params);

/// One RK4 step of length h. Angles are wrapped afterwards.
/// Throws DivergenceError on a non-finite result.
QuadState integrate_quad(const QuadState& s, const QuadInput& u, double h, const QuadParams& params);

/// Inner-loop gains. Not given in the literature; tuned for ~20 rad/s attitude
/// bandwidth with ~0.7 damping. The moments are scaled by the axis inertia.
struct PidGains {
  double kp = 400.0;
  double ki = 40.0;
  double kd = 28.0;
  double yaw_kp = 100.0;
  double yaw_ki = 0.0;
  double yaw_kd = 20.0;
  double integral_limit = 0.2;  // rad*s
  double max_tilt = 0.5;        // rad
  double u1_max = 20.0;         // N, about 4 b (400 rad/s)^2

  void validate() const;
};

/// Converts commanded accelerations into (u1..u4). Keeps the attitude integrals.
class AccelerationTracker {
 public:
  AccelerationTracker(const QuadParams& params, const PidGains& gains);

  void reset();
  /// `a_cmd` has 2 or 3 components (planar commands leave z at 0). `h` is the
  /// time since the previous call, used for the integral terms.
  QuadInput update(const QuadState& s, const Vec& a_cmd, double h);

  /// Roll and pitch setpoints for a command at yaw psi, clamped to max_tilt.
  std::array<double, 2> attitude_setpoint(const Vec& a_cmd, double psi) const;
  double thrust(const Vec& a_cmd) const;

 private:
  QuadParams params_;
  PidGains gains_;
  std::array<double, 3> integral_{};
};

struct QuadLoopConfig {
  QuadParams params;
  PidGains gains;
  int substeps = 10;  // RK4 steps per dynamics step dt
  bool gyroscopic = false;  // recover rotor speeds and include the Omega_r terms

  void validate() const;
};

/// Same schedule as control_loop, with each agent flown as a quadrotor. The
/// controller sees positions and velocities read off the quad states; the
/// clamped command is tracked by the PID for eta*dt seconds. Snapshots carry
/// the full 12 x n quad block.
Trajectory quad_flock_loop(const FlockState& initial, Controller& controller, const SimParams& sim,
                           const QuadLoopConfig& config = {}, LoopStats* stats = nullptr);

}  // namespace flockforge

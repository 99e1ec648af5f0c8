#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "types.hpp"

namespace pcbf {

/// Continuous-time control system with an imperfect state sensor.
///
/// Dynamics are control-affine: xdot = drift(x) + control_matrix(x) * u.
/// `perception` maps the true state to the measured one. `project` is an
/// optional post-integration projection (angle wrapping, actuator-style
/// saturation of state components); identity when empty.
struct SystemModel {
  std::string name;
  int state_dim = 0;
  int control_dim = 0;
  Box state_bounds;    // X
  Box control_bounds;  // U
  Box safe_bounds;     // S, as a box; unconstrained dims mirror X
  std::vector<bool> safe_strict;  // per-dim: strict (<) vs inclusive (<=) bounds
  double dt = 0.01;

  std::function<Vec(const Vec&)> drift;
  std::function<Mat(const Vec&)> control_matrix;
  std::function<Vec(const Vec&)> perception;
  std::function<Vec(const Vec&)> project;

  mutable long long perception_calls = 0;  // diagnostic counter
};

/// xdot = drift(x) + B(x) u. Throws on dimension mismatch.
Vec vector_field(const SystemModel& sys, const Vec& x, const Vec& u);

/// Measured state for true state x. Increments the call counter.
Vec perceive(const SystemModel& sys, const Vec& x);

/// Membership in the safe set S (which is contained in X).
bool in_safe_set(const SystemModel& sys, const Vec& x);

bool in_state_space(const SystemModel& sys, const Vec& x);

/// One classical RK4 step of length f.dt under zero-order-hold control,
/// followed by the system's projection. Throws IntegrationBlowup if the
/// result is not finite.
Vec integrate_step(const SystemModel& sys, const Vec& x, const Vec& u);

/// Generic RK4 step for an arbitrary vector field (no projection).
template <typename F>
Vec rk4_step(const F& f, const Vec& x, double dt) {
  const Vec k1 = f(x);
  const Vec k2 = f(x + (0.5 * dt) * k1);
  const Vec k3 = f(x + (0.5 * dt) * k2);
  const Vec k4 = f(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

struct Trajectory {
  std::vector<Vec> states;
  std::vector<Vec> controls;  // one fewer than states unless early exit
  std::vector<double> times;
  bool exited_state_space = false;
};

/// Roll the closed loop forward for `horizon_s` seconds. The policy receives
/// the true state; callers bake perception and estimation into the closure.
/// Produces ceil(horizon/dt)+1 states unless the state leaves X, in which
/// case the rollout stops at the offending state with the exit flag set.
Trajectory rollout(const SystemModel& sys, const Vec& x0,
                   const std::function<Vec(const Vec&)>& policy,
                   double horizon_s);

/// CSV with header t,x0..x{n-1},u0..u{m-1}; the final row leaves the control
/// fields blank.
std::string trajectory_csv(const SystemModel& sys, const Trajectory& traj);

SystemModel make_dubins();
SystemModel make_cartpole();
SystemModel make_lanekeep();

/// Factory keyed by benchmark name ("dubins", "cartpole", "lanekeep").
SystemModel system_by_name(const std::string& name);

}  // namespace pcbf

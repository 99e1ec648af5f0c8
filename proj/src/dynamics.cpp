#include "dynamics.hpp"

#include <cmath>
#include <sstream>

#include "io.hpp"

namespace pcbf {

namespace {

constexpr double kPi = 3.14159265358979323846;

double wrap_angle(double a) {
  // Maps to [-pi, pi).
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a - kPi;
}

void check_state(const SystemModel& sys, const Vec& x, const char* where) {
  if (x.size() != sys.state_dim)
    throw ContractViolation(std::string(where) + ": state dimension mismatch");
}

void check_control(const SystemModel& sys, const Vec& u, const char* where) {
  if (u.size() != sys.control_dim)
    throw ContractViolation(std::string(where) + ": control dimension mismatch");
}

}  // namespace

Vec vector_field(const SystemModel& sys, const Vec& x, const Vec& u) {
  check_state(sys, x, "vector_field");
  check_control(sys, u, "vector_field");
  return sys.drift(x) + sys.control_matrix(x) * u;
}

Vec perceive(const SystemModel& sys, const Vec& x) {
  check_state(sys, x, "perceive");
  ++sys.perception_calls;
  return sys.perception(x);
}

bool in_safe_set(const SystemModel& sys, const Vec& x) {
  check_state(sys, x, "in_safe_set");
  if (!sys.state_bounds.contains(x)) return false;  // S is a subset of X
  for (int i = 0; i < sys.state_dim; ++i) {
    const bool strict = sys.safe_strict[static_cast<std::size_t>(i)];
    if (strict ? (x[i] <= sys.safe_bounds.lo[i] || x[i] >= sys.safe_bounds.hi[i])
               : (x[i] < sys.safe_bounds.lo[i] || x[i] > sys.safe_bounds.hi[i]))
      return false;
  }
  return true;
}

bool in_state_space(const SystemModel& sys, const Vec& x) {
  check_state(sys, x, "in_state_space");
  return sys.state_bounds.contains(x);
}

Vec integrate_step(const SystemModel& sys, const Vec& x, const Vec& u) {
  check_state(sys, x, "integrate_step");
  check_control(sys, u, "integrate_step");
  // The lambda must return a materialized Vec: deducing Eigen's expression type
  // here would capture references to the drift/control temporaries, which are
  // gone by the time rk4_step evaluates the expression.
  Vec next = rk4_step(
      [&](const Vec& s) -> Vec { return sys.drift(s) + sys.control_matrix(s) * u; },
      x, sys.dt);
  if (sys.project) next = sys.project(next);
  if (!next.allFinite()) throw IntegrationBlowup(sys.name + ": non-finite state after step");
  return next;
}

Trajectory rollout(const SystemModel& sys, const Vec& x0,
                   const std::function<Vec(const Vec&)>& policy,
                   double horizon_s) {
  check_state(sys, x0, "rollout");
  if (horizon_s <= 0) throw ContractViolation("rollout: horizon must be positive");
  const int steps = static_cast<int>(std::ceil(horizon_s / sys.dt - 1e-9));
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.states.push_back(x0);
  traj.times.push_back(0.0);
  Vec x = x0;
  for (int k = 0; k < steps; ++k) {
    if (!in_state_space(sys, x)) {
      traj.exited_state_space = true;
      return traj;
    }
    Vec u = policy(x);
    check_control(sys, u, "rollout policy");
    x = integrate_step(sys, x, u);
    traj.controls.push_back(std::move(u));
    traj.states.push_back(x);
    traj.times.push_back(sys.dt * (k + 1));
  }
  if (!in_state_space(sys, x)) traj.exited_state_space = true;
  return traj;
}

std::string trajectory_csv(const SystemModel& sys, const Trajectory& traj) {
  std::ostringstream out;
  out << "t";
  for (int i = 0; i < sys.state_dim; ++i) out << ",x" << i;
  for (int i = 0; i < sys.control_dim; ++i) out << ",u" << i;
  out << "\n";
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    out << dec_string(traj.times[k]);
    for (int i = 0; i < sys.state_dim; ++i) out << "," << dec_string(traj.states[k][i]);
    for (int i = 0; i < sys.control_dim; ++i) {
      out << ",";
      if (k < traj.controls.size()) out << dec_string(traj.controls[k][i]);
    }
    out << "\n";
  }
  return out.str();
}

SystemModel make_dubins() {
  SystemModel sys;
  sys.name = "dubins";
  sys.state_dim = 4;   // (px, py, heading, speed)
  sys.control_dim = 2; // (turn rate, acceleration)
  sys.state_bounds = {Vec{{-3.0, -3.0, -kPi, 0.5}}, Vec{{3.0, 3.0, kPi, 2.0}}};
  sys.control_bounds = {Vec{{-2.0, -2.0}}, Vec{{2.0, 2.0}}};
  sys.safe_bounds = {Vec{{-2.0, -2.0, -kPi, 0.5}}, Vec{{2.0, 2.0, kPi, 2.0}}};
  sys.safe_strict = {false, false, false, false};
  sys.drift = [](const Vec& x) {
    return Vec{{x[3] * std::cos(x[2]), x[3] * std::sin(x[2]), 0.0, 0.0}};
  };
  sys.control_matrix = [](const Vec&) {
    Mat b = Mat::Zero(4, 2);
    b(2, 0) = 1.0;
    b(3, 1) = 1.0;
    return b;
  };
  sys.perception = [](const Vec& x) {
    return Vec{{x[0], x[1], x[2] + std::sin(x[0] + x[1]), x[3]}};
  };
  // Heading wraps; the speed actuator saturates at its limits so that the
  // vehicle can only leave X through the position walls.
  sys.project = [](const Vec& x) {
    Vec p = x;
    p[2] = wrap_angle(p[2]);
    p[3] = std::fmin(std::fmax(p[3], 0.5), 2.0);
    return p;
  };
  return sys;
}

SystemModel make_cartpole() {
  SystemModel sys;
  sys.name = "cartpole";
  sys.state_dim = 4;   // (position, velocity, pole angle, pole rate)
  sys.control_dim = 1; // horizontal force on the cart
  sys.state_bounds = {Vec{{-3.4, -4.0, -1.0, -2.0}}, Vec{{3.4, 4.0, 1.0, 2.0}}};
  sys.control_bounds = {Vec{{-10.0}}, Vec{{10.0}}};
  sys.safe_bounds = {Vec{{-3.0, -4.0, -kPi / 6.0, -2.0}}, Vec{{3.0, 4.0, kPi / 6.0, 2.0}}};
  sys.safe_strict = {true, false, true, false};

  constexpr double g = 9.8, mc = 1.0, mp = 0.1, l = 0.5;
  constexpr double total = mc + mp, mpl = mp * l;
  auto accels = [=](const Vec& x, double force, double& xacc, double& aacc) {
    const double st = std::sin(x[2]), ct = std::cos(x[2]);
    const double tmp = (force + mpl * x[3] * x[3] * st) / total;
    aacc = (g * st - ct * tmp) / (l * (4.0 / 3.0 - mp * ct * ct / total));
    xacc = tmp - mpl * aacc * ct / total;
  };
  sys.drift = [=](const Vec& x) {
    double xacc, aacc;
    accels(x, 0.0, xacc, aacc);
    return Vec{{x[1], xacc, x[3], aacc}};
  };
  sys.control_matrix = [=](const Vec& x) {
    const double ct = std::cos(x[2]);
    const double daacc = (-ct / total) / (l * (4.0 / 3.0 - mp * ct * ct / total));
    const double dxacc = 1.0 / total - mpl * ct * daacc / total;
    Mat b = Mat::Zero(4, 1);
    b(1, 0) = dxacc;
    b(3, 0) = daacc;
    return b;
  };
  sys.perception = [](const Vec& x) {
    const double bias = 2.0 * x[0] + 4.0 * x[2];
    return Vec{{x[0], x[1] + std::sin(bias), x[2], x[3] + std::cos(bias)}};
  };
  return sys;
}

SystemModel make_lanekeep() {
  SystemModel sys;
  sys.name = "lanekeep";
  sys.state_dim = 2;   // (lateral offset, heading error)
  sys.control_dim = 1; // steering rate
  sys.state_bounds = {Vec{{-5.5, -0.45}}, Vec{{5.5, 0.45}}};
  sys.control_bounds = {Vec{{-1.0}}, Vec{{1.0}}};
  sys.safe_bounds = {Vec{{-3.5, -0.45}}, Vec{{3.5, 0.45}}};
  sys.safe_strict = {true, false};

  constexpr double speed = 5.0;
  sys.drift = [=](const Vec& x) { return Vec{{speed * std::sin(x[1]), 0.0}}; };
  sys.control_matrix = [](const Vec&) {
    Mat b = Mat::Zero(2, 1);
    b(1, 0) = 1.0;
    return b;
  };
  sys.perception = [](const Vec& x) {
    return Vec{{x[0] + 0.5 * std::sin(3.0 * x[1]), x[1] + 0.2 * std::sin(2.0 * x[0])}};
  };
  // Steering stop: heading error saturates at the X bound.
  sys.project = [](const Vec& x) {
    Vec p = x;
    p[1] = std::fmin(std::fmax(p[1], -0.45), 0.45);
    return p;
  };
  return sys;
}

SystemModel system_by_name(const std::string& name) {
  if (name == "dubins") return make_dubins();
  if (name == "cartpole") return make_cartpole();
  if (name == "lanekeep") return make_lanekeep();
  throw ContractViolation("unknown benchmark: " + name);
}

}  // namespace pcbf

#include <doctest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <sstream>

#include "dynamics.hpp"
#include "errors.hpp"
#include "rng.hpp"

using namespace pcbf;

namespace {
constexpr double kPi = 3.14159265358979323846;

Vec euler_fine(const SystemModel& sys, Vec x, const Vec& u, double horizon,
               double h = 1e-6) {
  const long long n = static_cast<long long>(std::llround(horizon / h));
  for (long long i = 0; i < n; ++i) x += h * vector_field(sys, x, u);
  return x;
}
}  // namespace

TEST_CASE("dubins vector field and straight-line motion") {
  const SystemModel sys = make_dubins();
  Vec x(4), u(2);
  x << 0, 0, 0, 1;
  u << 0, 0;
  const Vec xdot = vector_field(sys, x, u);
  CHECK(xdot(0) == 1.0);
  CHECK(xdot(1) == 0.0);
  CHECK(xdot(2) == 0.0);
  CHECK(xdot(3) == 0.0);

  // Constant field integrates exactly in one RK4 step.
  const Vec next = integrate_step(sys, x, u);
  CHECK(next(0) == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(next(1) == 0.0);
  CHECK(next(3) == 1.0);

  // Controls map to heading rate and acceleration.
  u << 2.0, -1.0;
  const Vec xdot2 = vector_field(sys, x, u);
  CHECK(xdot2(2) == 2.0);
  CHECK(xdot2(3) == -1.0);
}

TEST_CASE("cartpole equilibrium and unforced fall") {
  const SystemModel sys = make_cartpole();
  Vec x0(4), u(1);
  x0 << 0, 0, 0, 0;
  u << 0;
  CHECK(vector_field(sys, x0, u).norm() == 0.0);
  CHECK(integrate_step(sys, x0, u) == x0);

  // Slightly tilted pole falls further; compare one RK4 step against a
  // dt=1e-6 Euler reference.
  Vec x(4);
  x << 0, 0, 0.05, 0;
  const Vec stepped = integrate_step(sys, x, u);
  CHECK(stepped(2) > 0.05);
  const Vec ref = euler_fine(sys, x, u, sys.dt);
  CHECK((stepped - ref).norm() < 1e-7);
}

TEST_CASE("cartpole dynamics are exactly affine in the force") {
  const SystemModel sys = make_cartpole();
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    Vec x(4);
    for (int i = 0; i < 4; ++i)
      x(i) = rng.uniform(sys.state_bounds.lo(i), sys.state_bounds.hi(i));
    const double f1 = rng.uniform(-10.0, 10.0);
    const double f2 = rng.uniform(-10.0, 10.0);
    Vec u1(1), u2(1), umid(1);
    u1 << f1;
    u2 << f2;
    umid << 0.5 * (f1 + f2);
    const Vec mid = 0.5 * (vector_field(sys, x, u1) + vector_field(sys, x, u2));
    CHECK((vector_field(sys, x, umid) - mid).norm() < 1e-12);
  }
}

TEST_CASE("lanekeep vector field") {
  const SystemModel sys = make_lanekeep();
  Vec x(2), u(1);
  x << 0, kPi / 2.0;
  u << 0;
  const Vec xdot = vector_field(sys, x, u);
  CHECK(xdot(0) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(xdot(1) == 0.0);
  u << 0.3;
  CHECK(vector_field(sys, x, u)(1) == doctest::Approx(0.3));
}

TEST_CASE("rk4 matches the matrix exponential on a linear system") {
  // Cart-pole linearized about the upright equilibrium.
  Mat A = Mat::Zero(4, 4);
  A(0, 1) = 1.0;
  A(2, 3) = 1.0;
  const double denom = 0.5 * (4.0 / 3.0 - 0.1 / 1.1);
  A(3, 2) = 9.8 / denom;
  A(1, 2) = -0.1 * 0.5 * A(3, 2) / 1.1;

  Vec x(4);
  x << 0.1, -0.05, 0.02, 0.03;
  const double dt = 0.01;
  Vec numeric = x;
  for (int k = 0; k < 100; ++k)
    numeric = rk4_step([&](const Vec& s) { return Vec(A * s); }, numeric, dt);
  const Vec exact = (A * 1.0).exp() * x;
  CHECK((numeric - exact).norm() / exact.norm() < 1e-6);
}

TEST_CASE("perception matches the stated error models and is deterministic") {
  const SystemModel dubins = make_dubins();
  Vec x(4);
  x << 0, 0, 0.3, 1;
  CHECK(perceive(dubins, x) == x);  // sin(0+0) = 0
  x << kPi / 2.0, 0, 0, 1;
  const Vec xh = perceive(dubins, x);
  CHECK(xh(2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(xh(0) == x(0));
  CHECK(xh(1) == x(1));
  CHECK(xh(3) == x(3));
  CHECK(perceive(dubins, x) == xh);

  const SystemModel cart = make_cartpole();
  Vec c(4);
  c << 0, 1, 0, 0;
  const Vec ch = perceive(cart, c);
  CHECK(ch(0) == 0.0);
  CHECK(ch(1) == 1.0);  // v + sin(0)
  CHECK(ch(2) == 0.0);
  CHECK(ch(3) == 1.0);  // w + cos(0)

  const SystemModel lane = make_lanekeep();
  Vec l(2);
  l << 1.0, 0.2;
  const Vec lh = perceive(lane, l);
  CHECK(lh(0) == doctest::Approx(1.0 + 0.5 * std::sin(0.6)).epsilon(1e-15));
  CHECK(lh(1) == doctest::Approx(0.2 + 0.2 * std::sin(2.0)).epsilon(1e-15));
}

TEST_CASE("perception call counter increments") {
  const SystemModel sys = make_lanekeep();
  const long long before = sys.perception_calls;
  Vec x(2);
  x << 0, 0;
  perceive(sys, x);
  perceive(sys, x);
  CHECK(sys.perception_calls == before + 2);
}

TEST_CASE("safe set membership honors strict and inclusive bounds") {
  const SystemModel cart = make_cartpole();
  Vec x(4);
  x << 0, 0, 0, 0;
  CHECK(in_safe_set(cart, x));
  x << 3.0, 0, 0, 0;
  CHECK(!in_safe_set(cart, x));
  x << 2.999, 0, kPi / 6.0, 0;
  CHECK(!in_safe_set(cart, x));

  const SystemModel lane = make_lanekeep();
  Vec l(2);
  l << 3.6, 0;
  CHECK(!in_safe_set(lane, l));
  l << 3.4, 0;
  CHECK(in_safe_set(lane, l));

  const SystemModel dubins = make_dubins();
  Vec d(4);
  d << 2.0, -2.0, 1.0, 1.0;
  CHECK(in_safe_set(dubins, d));  // position bounds inclusive
  d << 2.001, 0, 0, 1.0;
  CHECK(!in_safe_set(dubins, d));
}

TEST_CASE("projection wraps the dubins heading and saturates speed") {
  const SystemModel sys = make_dubins();
  Vec x(4), u(2);
  x << 0, 0, kPi - 0.001, 1.0;
  u << 8.0, 0.0;  // push heading across the branch cut
  Vec next = integrate_step(sys, x, u);
  CHECK(next(2) >= -kPi);
  CHECK(next(2) < kPi);
  CHECK(next(2) == doctest::Approx(-kPi + 0.079).epsilon(1e-3));

  x << 0, 0, 0, 0.51;
  u << 0.0, -6.0;  // brake through the lower speed limit
  next = integrate_step(sys, x, u);
  CHECK(next(3) == 0.5);
  x << 0, 0, 0, 1.99;
  u << 0.0, 6.0;
  next = integrate_step(sys, x, u);
  CHECK(next(3) == 2.0);
}

TEST_CASE("rollout produces ceil(h/dt)+1 states and stops on exit") {
  const SystemModel sys = make_dubins();
  Vec x0(4);
  x0 << 0, 0, 0, 1;
  const auto zero = [&](const Vec&) { return Vec(Vec::Zero(2)); };

  Trajectory traj = rollout(sys, x0, zero, 1.0);
  CHECK(traj.states.size() == 101);
  CHECK(traj.controls.size() == 100);
  CHECK(traj.times.size() == 101);
  CHECK(!traj.exited_state_space);
  CHECK(traj.states.back()(0) == doctest::Approx(1.0).epsilon(1e-12));

  Trajectory two = rollout(sys, x0, zero, sys.dt);
  CHECK(two.states.size() == 2);

  // Starting near the wall and driving straight leaves X quickly.
  Vec xe(4);
  xe << 2.95, 0, 0, 2.0;
  Trajectory exit = rollout(sys, xe, zero, 1.0);
  CHECK(exit.exited_state_space);
  CHECK(exit.states.size() < 101);
  CHECK(!in_state_space(sys, exit.states.back()));
}

TEST_CASE("unforced cartpole leaves the safe set within 10 s") {
  const SystemModel sys = make_cartpole();
  Vec x0(4);
  x0 << 0, 0, 0.1, 0;
  const auto zero = [&](const Vec&) { return Vec(Vec::Zero(1)); };
  Trajectory traj = rollout(sys, x0, zero, 10.0);
  // The tilt grows monotonically without control; the trajectory must leave
  // the safe set (through the angle cone or the rate bound) well before the
  // horizon runs out.
  bool left_safe = traj.exited_state_space;
  for (const Vec& s : traj.states)
    if (!in_safe_set(sys, s)) left_safe = true;
  CHECK(left_safe);
  CHECK(traj.states.size() < 1001);
  // The tilt itself must have grown, not just drifted sideways.
  CHECK(traj.states.back()(2) > 0.2);
}

TEST_CASE("trajectory csv has the documented shape") {
  const SystemModel sys = make_lanekeep();
  Vec x0(2);
  x0 << 0.5, 0.1;
  const auto zero = [&](const Vec&) { return Vec(Vec::Zero(1)); };
  const Trajectory traj = rollout(sys, x0, zero, 0.03);
  const std::string csv = trajectory_csv(sys, traj);

  std::istringstream in(csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);  // header + 4 states
  CHECK(lines[0] == "t,x0,x1,u0");
  CHECK(lines[1].rfind("0,0.5,", 0) == 0);
  // Final row leaves the control blank.
  CHECK(lines[4].back() == ',');
}

TEST_CASE("dimension mismatches are contract violations") {
  const SystemModel sys = make_dubins();
  Vec bad(2), u(2);
  bad << 0, 0;
  u << 0, 0;
  CHECK_THROWS_AS(vector_field(sys, bad, u), ContractViolation);
  Vec x(4);
  x << 0, 0, 0, 1;
  Vec ubad(1);
  ubad << 0;
  CHECK_THROWS_AS(vector_field(sys, x, ubad), ContractViolation);
  CHECK_THROWS_AS(system_by_name("quadrotor"), ContractViolation);
  CHECK(system_by_name("cartpole").name == "cartpole");
}

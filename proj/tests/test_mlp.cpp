#include <doctest.h>

#include <cmath>

#include "mlp.hpp"
#include "rng.hpp"

using namespace pcbf;

namespace {

// Central finite difference of a scalar functional of the parameters.
template <typename F>
Vec fd_param_grad(const MlpParams& p, F f, double eps = 1e-6) {
  MlpParams q = p;
  const Vec theta0 = p.flatten();
  Vec g(theta0.size());
  for (int i = 0; i < theta0.size(); ++i) {
    Vec theta = theta0;
    theta(i) = theta0(i) + eps;
    q.unflatten(theta);
    const double hi = f(q);
    theta(i) = theta0(i) - eps;
    q.unflatten(theta);
    const double lo = f(q);
    g(i) = (hi - lo) / (2.0 * eps);
  }
  return g;
}

double rel_err(const Vec& a, const Vec& b) {
  const double denom = std::max(1.0, std::max(a.norm(), b.norm()));
  return (a - b).norm() / denom;
}

}  // namespace

TEST_CASE("init is deterministic and bounded by 1/sqrt(fan_in)") {
  const MlpParams a = mlp_init(3, 16, 2, OutputHead::linear, Vec(), Vec(), 42);
  const MlpParams b = mlp_init(3, 16, 2, OutputHead::linear, Vec(), Vec(), 42);
  CHECK(a.flatten() == b.flatten());

  const MlpParams c = mlp_init(3, 16, 2, OutputHead::linear, Vec(), Vec(), 43);
  CHECK(a.flatten() != c.flatten());

  CHECK(a.w1.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(3.0));
  CHECK(a.b1.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(3.0));
  CHECK(a.w2.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(16.0));
  CHECK(a.w3.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(16.0));
}

TEST_CASE("flatten/unflatten round-trip") {
  const MlpParams p = mlp_init(4, 8, 3, OutputHead::box_tanh,
                               Vec::Constant(3, -2.0), Vec::Constant(3, 5.0), 7);
  const Vec theta = p.flatten();
  CHECK(theta.size() == p.param_count());

  MlpParams q = mlp_init(4, 8, 3, OutputHead::box_tanh,
                         Vec::Constant(3, -2.0), Vec::Constant(3, 5.0), 8);
  q.unflatten(theta);
  CHECK(q.flatten() == theta);
  CHECK(q.w2 == p.w2);
  CHECK(q.b3 == p.b3);
}

TEST_CASE("box head stays strictly inside its box") {
  Vec lo(2), hi(2);
  lo << -2.0, -6.0;
  hi << 2.0, -1.0;
  MlpParams p = mlp_init(3, 8, 2, OutputHead::box_tanh, lo, hi, 11);
  // Inflate weights so tanh saturates hard.
  p.w3 *= 50.0;
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    Vec x(3);
    for (int i = 0; i < 3; ++i) x(i) = rng.uniform(-10.0, 10.0);
    const Vec u = mlp_forward(p, x);
    for (int k = 0; k < 2; ++k) {
      CHECK(u(k) >= lo(k));
      CHECK(u(k) <= hi(k));
    }
  }
}

TEST_CASE("tape replay reproduces the forward pass bit-exactly") {
  const MlpParams p = mlp_init(4, 12, 1, OutputHead::linear, Vec(), Vec(), 3);
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    Vec x(4);
    for (int i = 0; i < 4; ++i) x(i) = rng.normal();
    DualTape tape;
    const Vec out = mlp_forward_tape(p, x, tape);
    const Vec replayed = mlp_replay(p, tape);
    CHECK(out == replayed);
    CHECK(out == mlp_forward(p, x));
  }
}

TEST_CASE("input gradient matches central differences") {
  Rng rng(21);
  for (int t = 0; t < 10; ++t) {
    const MlpParams p =
        mlp_init(3, 8, 1, OutputHead::linear, Vec(), Vec(), 100 + t);
    Vec x(3);
    for (int i = 0; i < 3; ++i) x(i) = rng.uniform(-1.0, 1.0);
    const Vec g = mlp_grad_input(p, x);
    const double eps = 1e-6;
    Vec fd(3);
    for (int i = 0; i < 3; ++i) {
      Vec xp = x, xm = x;
      xp(i) += eps;
      xm(i) -= eps;
      fd(i) = (mlp_forward(p, xp)(0) - mlp_forward(p, xm)(0)) / (2.0 * eps);
    }
    CHECK(rel_err(g, fd) < 1e-7);
  }
}

TEST_CASE("parameter gradient of upstream.output matches central differences") {
  Rng rng(31);
  for (int t = 0; t < 8; ++t) {
    const int out_dim = 1 + (t % 3);
    Vec lo = Vec::Constant(out_dim, -3.0);
    Vec hi = Vec::Constant(out_dim, 1.5);
    const OutputHead head = (t % 2 == 0) ? OutputHead::linear : OutputHead::box_tanh;
    const MlpParams p = mlp_init(3, 8, out_dim, head, lo, hi, 200 + t);
    Vec x(3), upstream(out_dim);
    for (int i = 0; i < 3; ++i) x(i) = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < out_dim; ++i) upstream(i) = rng.normal();

    const MlpGrads g = mlp_grad_params_output(p, x, upstream);
    const Vec fd = fd_param_grad(p, [&](const MlpParams& q) {
      return upstream.dot(mlp_forward(q, x));
    });
    CHECK(rel_err(g.flatten(), fd) < 1e-6);
  }
}

TEST_CASE("parameter gradient of the directional derivative matches central differences") {
  Rng rng(41);
  for (int t = 0; t < 8; ++t) {
    const MlpParams p = mlp_init(4, 8, 1, OutputHead::linear, Vec(), Vec(), 300 + t);
    Vec x(4), v(4);
    for (int i = 0; i < 4; ++i) {
      x(i) = rng.uniform(-1.0, 1.0);
      v(i) = rng.normal();
    }
    const MlpGrads g = mlp_grad_params_directional(p, x, v);
    const Vec fd = fd_param_grad(p, [&](const MlpParams& q) {
      return mlp_grad_input(q, x).dot(v);
    });
    CHECK(rel_err(g.flatten(), fd) < 1e-5);
  }
}

TEST_CASE("batched barrier kernels agree with per-sample wrappers") {
  const MlpParams p = mlp_init(3, 16, 1, OutputHead::linear, Vec(), Vec(), 55);
  const int rows = 7;
  Rng rng(77);
  Mat x(rows, 3), v(rows, 3);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < 3; ++c) {
      x(r, c) = rng.uniform(-1.0, 1.0);
      v(r, c) = rng.normal();
    }

  BarrierBatch ws;
  barrier_forward(p, x, ws);
  barrier_tangent(p, v, ws);
  barrier_input_grads(p, ws);

  for (int r = 0; r < rows; ++r) {
    const Vec xr = x.row(r).transpose();
    CHECK(ws.h(r) == doctest::Approx(mlp_forward(p, xr)(0)).epsilon(1e-14));
    const Vec gr = mlp_grad_input(p, xr);
    CHECK((ws.g.row(r).transpose() - gr).norm() < 1e-12);
    CHECK(ws.phi(r) == doctest::Approx(gr.dot(v.row(r).transpose())).epsilon(1e-12));
  }
}

TEST_CASE("batched barrier parameter gradients match the composed per-sample gradients") {
  const MlpParams p = mlp_init(3, 8, 1, OutputHead::linear, Vec(), Vec(), 66);
  const int rows = 5;
  Rng rng(88);
  Mat x(rows, 3), v(rows, 3);
  Vec cphi(rows), cy(rows);
  for (int r = 0; r < rows; ++r) {
    cphi(r) = rng.normal();
    cy(r) = rng.normal();
    for (int c = 0; c < 3; ++c) {
      x(r, c) = rng.uniform(-1.0, 1.0);
      v(r, c) = rng.normal();
    }
  }

  BarrierBatch ws;
  barrier_forward(p, x, ws);
  barrier_tangent(p, v, ws);
  MlpGrads got;
  got.resize_like(p);
  got.set_zero();
  barrier_param_grads(p, x, v, cphi, cy, ws, got);

  const Vec fd = fd_param_grad(p, [&](const MlpParams& q) {
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) {
      const Vec xr = x.row(r).transpose();
      const Vec vr = v.row(r).transpose();
      acc += cphi(r) * mlp_grad_input(q, xr).dot(vr);
      acc += cy(r) * mlp_forward(q, xr)(0);
    }
    return acc;
  });
  CHECK(rel_err(got.flatten(), fd) < 1e-5);
}

TEST_CASE("batched controller kernels agree with per-sample wrappers and finite differences") {
  Vec lo(2), hi(2);
  lo << -2.0, -1.0;
  hi << 2.0, 3.0;
  const MlpParams p = mlp_init(4, 8, 2, OutputHead::box_tanh, lo, hi, 99);
  const int rows = 6;
  Rng rng(111);
  Mat c(rows, 4), du(rows, 2);
  for (int r = 0; r < rows; ++r) {
    for (int k = 0; k < 4; ++k) c(r, k) = rng.uniform(-1.0, 1.0);
    for (int k = 0; k < 2; ++k) du(r, k) = rng.normal();
  }

  ControllerBatch ws;
  controller_forward(p, c, ws);
  for (int r = 0; r < rows; ++r) {
    const Vec ur = mlp_forward(p, c.row(r).transpose());
    CHECK((ws.u.row(r).transpose() - ur).norm() < 1e-13);
  }

  MlpGrads got;
  got.resize_like(p);
  got.set_zero();
  controller_param_grads(p, c, du, ws, got);

  const Vec fd = fd_param_grad(p, [&](const MlpParams& q) {
    double acc = 0.0;
    for (int r = 0; r < rows; ++r)
      acc += du.row(r).dot(mlp_forward(q, c.row(r).transpose()).transpose());
    return acc;
  });
  CHECK(rel_err(got.flatten(), fd) < 1e-5);
}

TEST_CASE("sgd step moves parameters by -lr*g") {
  MlpParams p = mlp_init(2, 4, 1, OutputHead::linear, Vec(), Vec(), 5);
  const Vec before = p.flatten();
  MlpGrads g;
  g.resize_like(p);
  g.set_zero();
  g.w1.setConstant(2.0);
  g.b3.setConstant(-1.0);
  mlp_apply_step(p, g, 0.25);
  const Vec after = p.flatten();
  const Vec delta = after - before;
  // w1 occupies the first block of the flattened vector, b3 the last entry.
  CHECK(delta.head(p.w1.size()).isApproxToConstant(-0.5));
  CHECK(delta(delta.size() - 1) == doctest::Approx(0.25));
  CHECK(delta.segment(p.w1.size(), p.b1.size()).norm() == 0.0);
}

TEST_CASE("json round-trip preserves parameters exactly") {
  Vec lo(2), hi(2);
  lo << -1.5, 0.0;
  hi << 1.5, 4.0;
  const MlpParams p = mlp_init(3, 8, 2, OutputHead::box_tanh, lo, hi, 321);
  const std::string text = mlp_to_json(p);
  const MlpParams q = mlp_from_json(text);
  CHECK(q.in_dim == p.in_dim);
  CHECK(q.hidden == p.hidden);
  CHECK(q.out_dim == p.out_dim);
  CHECK(q.head == p.head);
  CHECK(q.flatten() == p.flatten());
  CHECK(q.out_lo == p.out_lo);
  CHECK(q.out_hi == p.out_hi);

  const MlpParams lin = mlp_init(5, 4, 1, OutputHead::linear, Vec(), Vec(), 11);
  const MlpParams lin2 = mlp_from_json(mlp_to_json(lin));
  CHECK(lin2.flatten() == lin.flatten());
  CHECK(lin2.head == OutputHead::linear);
}

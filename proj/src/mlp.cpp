#include "mlp.hpp"

#include <cmath>
#include <utility>

#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace pcbf {

namespace {

using nlohmann::ordered_json;

void require(bool ok, const char* msg) {
  if (!ok) throw ContractViolation(msg);
}

ordered_json vec_json(const Vec& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(dec_string(v(i)));
  return a;
}

ordered_json mat_json(const Mat& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(dec_string(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Vec vec_from_json(const ordered_json& a) {
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = parse_double(a.at(i).get<std::string>());
  return v;
}

Mat mat_from_json(const ordered_json& a, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(a.size()) != rows)
    throw IoError("mlp checkpoint: matrix row count mismatch");
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = a.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw IoError("mlp checkpoint: matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = parse_double(row.at(static_cast<std::size_t>(c)).get<std::string>());
  }
  return m;
}

int flat_write(Vec& out, int at, const Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(at++) = m(r, c);
  return at;
}

int flat_write(Vec& out, int at, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out(at++) = v(i);
  return at;
}

int flat_read(const Vec& in, int at, Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in(at++);
  return at;
}

int flat_read(const Vec& in, int at, Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = in(at++);
  return at;
}

Vec apply_head(const MlpParams& p, const Vec& y) {
  if (p.head == OutputHead::linear) return y;
  Vec mid = 0.5 * (p.out_lo + p.out_hi);
  Vec half = 0.5 * (p.out_hi - p.out_lo);
  return (mid.array() + half.array() * y.array().tanh()).matrix();
}

}  // namespace

int MlpParams::param_count() const {
  return hidden * in_dim + hidden + hidden * hidden + hidden + out_dim * hidden + out_dim;
}

Vec MlpParams::flatten() const {
  Vec out(param_count());
  int at = 0;
  at = flat_write(out, at, w1);
  at = flat_write(out, at, b1);
  at = flat_write(out, at, w2);
  at = flat_write(out, at, b2);
  at = flat_write(out, at, w3);
  at = flat_write(out, at, b3);
  return out;
}

void MlpParams::unflatten(const Vec& theta) {
  require(theta.size() == param_count(), "unflatten: parameter vector size mismatch");
  int at = 0;
  at = flat_read(theta, at, w1);
  at = flat_read(theta, at, b1);
  at = flat_read(theta, at, w2);
  at = flat_read(theta, at, b2);
  at = flat_read(theta, at, w3);
  at = flat_read(theta, at, b3);
}

void MlpGrads::resize_like(const MlpParams& p) {
  w1.resize(p.w1.rows(), p.w1.cols());
  w2.resize(p.w2.rows(), p.w2.cols());
  w3.resize(p.w3.rows(), p.w3.cols());
  b1.resize(p.b1.size());
  b2.resize(p.b2.size());
  b3.resize(p.b3.size());
  set_zero();
}

void MlpGrads::set_zero() {
  w1.setZero();
  w2.setZero();
  w3.setZero();
  b1.setZero();
  b2.setZero();
  b3.setZero();
}

Vec MlpGrads::flatten() const {
  Vec out(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size());
  int at = 0;
  at = flat_write(out, at, w1);
  at = flat_write(out, at, b1);
  at = flat_write(out, at, w2);
  at = flat_write(out, at, b2);
  at = flat_write(out, at, w3);
  at = flat_write(out, at, b3);
  return out;
}

void mlp_apply_step(MlpParams& p, const MlpGrads& g, double lr) {
  p.w1 -= lr * g.w1;
  p.b1 -= lr * g.b1;
  p.w2 -= lr * g.w2;
  p.b2 -= lr * g.b2;
  p.w3 -= lr * g.w3;
  p.b3 -= lr * g.b3;
}

MlpParams mlp_init(int in_dim, int hidden, int out_dim, OutputHead head,
                   const Vec& out_lo, const Vec& out_hi, std::uint64_t seed) {
  require(in_dim > 0 && hidden > 0 && out_dim > 0, "mlp_init: dimensions must be positive");
  MlpParams p;
  p.in_dim = in_dim;
  p.hidden = hidden;
  p.out_dim = out_dim;
  p.head = head;
  p.w1.resize(hidden, in_dim);
  p.b1.resize(hidden);
  p.w2.resize(hidden, hidden);
  p.b2.resize(hidden);
  p.w3.resize(out_dim, hidden);
  p.b3.resize(out_dim);
  if (head == OutputHead::box_tanh) {
    require(out_lo.size() == out_dim && out_hi.size() == out_dim,
            "mlp_init: output box dimension mismatch");
    for (int i = 0; i < out_dim; ++i)
      require(out_hi(i) > out_lo(i), "mlp_init: output box must have positive width");
    p.out_lo = out_lo;
    p.out_hi = out_hi;
  }

  Rng rng(seed);
  auto fill_mat = [&rng](Mat& m, double bound) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
  };
  auto fill_vec = [&rng](Vec& v, double bound) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(-bound, bound);
  };
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  fill_mat(p.w1, bound1);
  fill_vec(p.b1, bound1);
  fill_mat(p.w2, bound2);
  fill_vec(p.b2, bound2);
  fill_mat(p.w3, bound2);
  fill_vec(p.b3, bound2);
  return p;
}

Vec mlp_forward_tape(const MlpParams& p, const Vec& x, DualTape& tape) {
  require(x.size() == p.in_dim, "mlp forward: input dimension mismatch");
  tape.x = x;
  tape.z1 = p.w1 * x + p.b1;
  tape.a1 = tape.z1.array().tanh().matrix();
  tape.z2 = p.w2 * tape.a1 + p.b2;
  tape.a2 = tape.z2.array().tanh().matrix();
  tape.y = p.w3 * tape.a2 + p.b3;
  tape.out = apply_head(p, tape.y);
  return tape.out;
}

Vec mlp_forward(const MlpParams& p, const Vec& x) {
  DualTape tape;
  return mlp_forward_tape(p, x, tape);
}

Vec mlp_replay(const MlpParams& p, const DualTape& tape) {
  DualTape fresh;
  return mlp_forward_tape(p, tape.x, fresh);
}

Vec mlp_grad_input(const MlpParams& p, const Vec& x) {
  require(p.head == OutputHead::linear && p.out_dim == 1,
          "mlp_grad_input: scalar linear head required");
  require(x.size() == p.in_dim, "mlp_grad_input: input dimension mismatch");
  Vec a1 = (p.w1 * x + p.b1).array().tanh().matrix();
  Vec a2 = (p.w2 * a1 + p.b2).array().tanh().matrix();
  Vec p2 = ((1.0 - a2.array().square()) * p.w3.row(0).transpose().array()).matrix();
  Vec p1 = ((1.0 - a1.array().square()) * (p.w2.transpose() * p2).array()).matrix();
  return p.w1.transpose() * p1;
}

MlpGrads mlp_grad_params_output(const MlpParams& p, const Vec& x, const Vec& upstream) {
  require(upstream.size() == p.out_dim, "mlp_grad_params_output: upstream size mismatch");
  ControllerBatch ws;
  Mat xs = x.transpose();
  controller_forward(p, xs, ws);
  MlpGrads g;
  g.resize_like(p);
  controller_param_grads(p, xs, upstream.transpose(), ws, g);
  return g;
}

MlpGrads mlp_grad_params_directional(const MlpParams& p, const Vec& x, const Vec& v) {
  require(p.head == OutputHead::linear && p.out_dim == 1,
          "mlp_grad_params_directional: scalar linear head required");
  require(v.size() == p.in_dim, "mlp_grad_params_directional: direction size mismatch");
  BarrierBatch ws;
  Mat xs = x.transpose();
  Mat vs = v.transpose();
  barrier_forward(p, xs, ws);
  barrier_tangent(p, vs, ws);
  MlpGrads g;
  g.resize_like(p);
  Vec cphi = Vec::Ones(1);
  Vec cy = Vec::Zero(1);
  barrier_param_grads(p, xs, vs, cphi, cy, ws, g);
  return g;
}

void barrier_forward(const MlpParams& p, const Mat& x, BarrierBatch& ws) {
  require(p.head == OutputHead::linear && p.out_dim == 1,
          "barrier_forward: scalar linear head required");
  require(x.cols() == p.in_dim, "barrier_forward: input dimension mismatch");
  ws.a1 = ((x * p.w1.transpose()).rowwise() + p.b1.transpose()).array().tanh().matrix();
  ws.a2 = ((ws.a1 * p.w2.transpose()).rowwise() + p.b2.transpose()).array().tanh().matrix();
  ws.h = ws.a2 * p.w3.row(0).transpose();
  ws.h.array() += p.b3(0);
}

void barrier_tangent(const MlpParams& p, const Mat& v, BarrierBatch& ws) {
  require(v.rows() == ws.a1.rows() && v.cols() == p.in_dim,
          "barrier_tangent: direction shape mismatch");
  ws.d1 = v * p.w1.transpose();
  ws.t1 = ((1.0 - ws.a1.array().square()) * ws.d1.array()).matrix();
  ws.d2 = ws.t1 * p.w2.transpose();
  ws.t2 = ((1.0 - ws.a2.array().square()) * ws.d2.array()).matrix();
  ws.phi = ws.t2 * p.w3.row(0).transpose();
}

void barrier_input_grads(const MlpParams& p, BarrierBatch& ws) {
  ws.p2 = ((1.0 - ws.a2.array().square()).rowwise() * p.w3.row(0).array()).matrix();
  ws.p1 = ((1.0 - ws.a1.array().square()) * (ws.p2 * p.w2).array()).matrix();
  ws.g = ws.p1 * p.w1;
}

void barrier_param_grads(const MlpParams& p, const Mat& x, const Mat& v,
                         const Vec& cphi, const Vec& cy,
                         const BarrierBatch& ws, MlpGrads& out) {
  const Eigen::Index rows = x.rows();
  require(cphi.size() == rows && cy.size() == rows,
          "barrier_param_grads: coefficient size mismatch");
  Eigen::ArrayXXd s1 = 1.0 - ws.a1.array().square();
  Eigen::ArrayXXd s2 = 1.0 - ws.a2.array().square();

  Mat bar_t2 = cphi * p.w3.row(0);
  Mat bar_d2 = (s2 * bar_t2.array()).matrix();
  Mat bar_a2 =
      ((cy * p.w3.row(0)).array() - 2.0 * ws.a2.array() * ws.d2.array() * bar_t2.array())
          .matrix();
  Mat bar_z2 = (s2 * bar_a2.array()).matrix();

  out.w3.row(0) += (ws.t2.transpose() * cphi + ws.a2.transpose() * cy).transpose();
  out.b3(0) += cy.sum();
  out.w2 += bar_d2.transpose() * ws.t1 + bar_z2.transpose() * ws.a1;
  out.b2 += bar_z2.colwise().sum().transpose();

  Mat bar_t1 = bar_d2 * p.w2;
  Mat bar_a1 =
      ((bar_z2 * p.w2).array() - 2.0 * ws.a1.array() * ws.d1.array() * bar_t1.array())
          .matrix();
  Mat bar_d1 = (s1 * bar_t1.array()).matrix();
  Mat bar_z1 = (s1 * bar_a1.array()).matrix();

  out.w1 += bar_z1.transpose() * x + bar_d1.transpose() * v;
  out.b1 += bar_z1.colwise().sum().transpose();
}

void controller_forward(const MlpParams& p, const Mat& c, ControllerBatch& ws) {
  require(c.cols() == p.in_dim, "controller_forward: input dimension mismatch");
  ws.a1 = ((c * p.w1.transpose()).rowwise() + p.b1.transpose()).array().tanh().matrix();
  ws.a2 = ((ws.a1 * p.w2.transpose()).rowwise() + p.b2.transpose()).array().tanh().matrix();
  ws.y = (ws.a2 * p.w3.transpose()).rowwise() + p.b3.transpose();
  if (p.head == OutputHead::linear) {
    ws.u = ws.y;
  } else {
    Vec mid = 0.5 * (p.out_lo + p.out_hi);
    Vec half = 0.5 * (p.out_hi - p.out_lo);
    ws.u = ((ws.y.array().tanh().rowwise() * half.transpose().array()).rowwise() +
            mid.transpose().array())
               .matrix();
  }
}

void controller_param_grads(const MlpParams& p, const Mat& c, const Mat& du,
                            const ControllerBatch& ws, MlpGrads& out) {
  require(du.rows() == c.rows() && du.cols() == p.out_dim,
          "controller_param_grads: upstream shape mismatch");
  Mat bar_y;
  if (p.head == OutputHead::linear) {
    bar_y = du;
  } else {
    Vec half = 0.5 * (p.out_hi - p.out_lo);
    bar_y = (((1.0 - ws.y.array().tanh().square()).rowwise() * half.transpose().array()) *
             du.array())
                .matrix();
  }
  out.w3 += bar_y.transpose() * ws.a2;
  out.b3 += bar_y.colwise().sum().transpose();
  Mat bar_z2 = ((1.0 - ws.a2.array().square()) * (bar_y * p.w3).array()).matrix();
  out.w2 += bar_z2.transpose() * ws.a1;
  out.b2 += bar_z2.colwise().sum().transpose();
  Mat bar_z1 = ((1.0 - ws.a1.array().square()) * (bar_z2 * p.w2).array()).matrix();
  out.w1 += bar_z1.transpose() * c;
  out.b1 += bar_z1.colwise().sum().transpose();
}

std::string mlp_to_json(const MlpParams& p) {
  ordered_json doc;
  doc["kind"] = "mlp";
  doc["head"] = p.head == OutputHead::linear ? "linear" : "box_tanh";
  doc["in_dim"] = p.in_dim;
  doc["hidden"] = p.hidden;
  doc["out_dim"] = p.out_dim;
  doc["w1"] = mat_json(p.w1);
  doc["b1"] = vec_json(p.b1);
  doc["w2"] = mat_json(p.w2);
  doc["b2"] = vec_json(p.b2);
  doc["w3"] = mat_json(p.w3);
  doc["b3"] = vec_json(p.b3);
  if (p.head == OutputHead::box_tanh) {
    doc["out_lo"] = vec_json(p.out_lo);
    doc["out_hi"] = vec_json(p.out_hi);
  }
  return doc.dump(2) + "\n";
}

MlpParams mlp_from_json(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw IoError(std::string("mlp checkpoint: invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("kind", "") != "mlp")
    throw IoError("mlp checkpoint: expected kind \"mlp\"");
  MlpParams p;
  const std::string head = doc.at("head").get<std::string>();
  if (head == "linear") {
    p.head = OutputHead::linear;
  } else if (head == "box_tanh") {
    p.head = OutputHead::box_tanh;
  } else {
    throw IoError("mlp checkpoint: unknown head \"" + head + "\"");
  }
  p.in_dim = doc.at("in_dim").get<int>();
  p.hidden = doc.at("hidden").get<int>();
  p.out_dim = doc.at("out_dim").get<int>();
  if (p.in_dim <= 0 || p.hidden <= 0 || p.out_dim <= 0)
    throw IoError("mlp checkpoint: dimensions must be positive");
  p.w1 = mat_from_json(doc.at("w1"), p.hidden, p.in_dim);
  p.b1 = vec_from_json(doc.at("b1"));
  p.w2 = mat_from_json(doc.at("w2"), p.hidden, p.hidden);
  p.b2 = vec_from_json(doc.at("b2"));
  p.w3 = mat_from_json(doc.at("w3"), p.out_dim, p.hidden);
  p.b3 = vec_from_json(doc.at("b3"));
  if (p.b1.size() != p.hidden || p.b2.size() != p.hidden || p.b3.size() != p.out_dim)
    throw IoError("mlp checkpoint: bias size mismatch");
  if (p.head == OutputHead::box_tanh) {
    p.out_lo = vec_from_json(doc.at("out_lo"));
    p.out_hi = vec_from_json(doc.at("out_hi"));
    if (p.out_lo.size() != p.out_dim || p.out_hi.size() != p.out_dim)
      throw IoError("mlp checkpoint: output box size mismatch");
  }
  return p;
}

}  // namespace pcbf

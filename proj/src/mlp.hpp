#pragma once

#include <cstdint>
#include <string>

#include "types.hpp"

namespace pcbf {

enum class OutputHead {
  linear,    // affine output (scalar barrier value)
  box_tanh,  // tanh output scaled componentwise into a box (controller)
};

/// Two-hidden-layer tanh network. Barrier networks use a linear scalar head;
/// controller networks squash into the control box so outputs are feasible
/// by construction.
struct MlpParams {
  int in_dim = 0;
  int hidden = 128;
  int out_dim = 1;
  OutputHead head = OutputHead::linear;
  Mat w1, w2, w3;  // hidden x in, hidden x hidden, out x hidden
  Vec b1, b2, b3;
  Vec out_lo, out_hi;  // box for box_tanh

  int param_count() const;
  Vec flatten() const;
  void unflatten(const Vec& theta);
};

/// Gradients in the same shapes as the parameters.
struct MlpGrads {
  Mat w1, w2, w3;
  Vec b1, b2, b3;

  void resize_like(const MlpParams& p);
  void set_zero();
  Vec flatten() const;
};

/// Apply one SGD step: p -= lr * g.
void mlp_apply_step(MlpParams& p, const MlpGrads& g, double lr);

/// Weights and biases drawn uniformly from +-1/sqrt(fan_in), seeded.
MlpParams mlp_init(int in_dim, int hidden, int out_dim, OutputHead head,
                   const Vec& out_lo, const Vec& out_hi, std::uint64_t seed);

/// Record of one forward pass; replaying it reruns the same computation from
/// the stored input and reproduces the output bit-exactly.
struct DualTape {
  Vec x;
  Vec z1, a1, z2, a2, y;  // y is the pre-head output
  Vec out;
};

Vec mlp_forward(const MlpParams& p, const Vec& x);
Vec mlp_forward_tape(const MlpParams& p, const Vec& x, DualTape& tape);
Vec mlp_replay(const MlpParams& p, const DualTape& tape);

/// Gradient of the scalar output with respect to the input. Linear scalar
/// head only.
Vec mlp_grad_input(const MlpParams& p, const Vec& x);

/// Parameter gradient of upstream . output (reverse mode, either head).
MlpGrads mlp_grad_params_output(const MlpParams& p, const Vec& x, const Vec& upstream);

/// Parameter gradient of the directional derivative (d output/d x) . v for
/// the scalar linear head (forward-over-reverse).
MlpGrads mlp_grad_params_directional(const MlpParams& p, const Vec& x, const Vec& v);

std::string mlp_to_json(const MlpParams& p);
MlpParams mlp_from_json(const std::string& text);

/// Batched barrier-network passes over row-major sample matrices. These are
/// the kernels the trainer runs; the per-sample operations above are
/// convenience wrappers with identical math.
struct BarrierBatch {
  Mat a1, a2;             // activations, R x h
  Vec h;                  // scalar outputs, R
  Mat d1, t1, d2, t2;     // forward tangent
  Vec phi;                // directional derivatives (grad_x h . v)
  Mat p2, p1, g;          // reverse intermediates and input gradients (g: R x n)
};

void barrier_forward(const MlpParams& p, const Mat& x, BarrierBatch& ws);
void barrier_tangent(const MlpParams& p, const Mat& v, BarrierBatch& ws);
void barrier_input_grads(const MlpParams& p, BarrierBatch& ws);

/// Accumulate parameter gradients of sum_s cphi[s]*phi[s] + cy[s]*h[s]
/// into `out`. Requires forward and tangent results in the workspace.
void barrier_param_grads(const MlpParams& p, const Mat& x, const Mat& v,
                         const Vec& cphi, const Vec& cy,
                         const BarrierBatch& ws, MlpGrads& out);

struct ControllerBatch {
  Mat a1, a2, y, u;  // u is post-head
};

void controller_forward(const MlpParams& p, const Mat& c, ControllerBatch& ws);

/// Accumulate parameter gradients of sum_s du[s] . u[s] into `out`.
void controller_param_grads(const MlpParams& p, const Mat& c, const Mat& du,
                            const ControllerBatch& ws, MlpGrads& out);

}  // namespace pcbf

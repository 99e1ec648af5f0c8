#pragma once

#include <Eigen/Dense>

#include "errors.hpp"
#include "rng.hpp"

namespace pcbf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Axis-aligned box, used for state spaces, control spaces and safe sets.
struct Box {
  Vec lo;
  Vec hi;

  int dim() const { return static_cast<int>(lo.size()); }

  bool contains(const Vec& x, bool strict = false) const {
    if (x.size() != lo.size()) throw ContractViolation("Box::contains: dimension mismatch");
    for (int i = 0; i < lo.size(); ++i) {
      if (strict ? (x[i] <= lo[i] || x[i] >= hi[i]) : (x[i] < lo[i] || x[i] > hi[i]))
        return false;
    }
    return true;
  }

  Vec clamp(const Vec& x) const {
    if (x.size() != lo.size()) throw ContractViolation("Box::clamp: dimension mismatch");
    return x.cwiseMax(lo).cwiseMin(hi);
  }

  Vec widths() const { return hi - lo; }

  /// Euclidean length of the box diagonal.
  double diameter() const { return (hi - lo).norm(); }

  Vec center() const { return 0.5 * (lo + hi); }

  Vec sample(Rng& rng) const {
    Vec x(lo.size());
    for (int i = 0; i < lo.size(); ++i) x[i] = rng.uniform(lo[i], hi[i]);
    return x;
  }
};

}  // namespace pcbf

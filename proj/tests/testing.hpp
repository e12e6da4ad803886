#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "cyclenet/autodiff.hpp"
#include "cyclenet/conv.hpp"
#include "cyclenet/rng.hpp"
#include "cyclenet/tensor.hpp"

namespace testing {

inline cyclenet::Tensor random_tensor(std::vector<int> shape, cyclenet::SeededRng& rng,
                                      double lo = -1.0, double hi = 1.0) {
  cyclenet::Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline cyclenet::ConvKernel random_kernel(int k, int c_out, int c_in, cyclenet::SeededRng& rng,
                                          bool with_bias = true) {
  cyclenet::ConvKernel ker(k, c_out, c_in, with_bias);
  for (size_t i = 0; i < ker.weights.size(); ++i) ker.weights[i] = rng.uniform(-1.0, 1.0);
  for (auto& b : ker.bias) b = rng.uniform(-1.0, 1.0);
  return ker;
}

inline double max_abs_diff(const cyclenet::Tensor& a, const cyclenet::Tensor& b) {
  if (!a.same_shape(b)) return HUGE_VAL;
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// finite-difference comparison: relative error with a small-magnitude floor
// so FD roundoff noise on near-zero gradients does not dominate
inline double fd_rel_err(double analytic, double fd) {
  double denom = std::max({0.01, std::fabs(analytic), std::fabs(fd)});
  return std::fabs(analytic - fd) / denom;
}

// scalar projection node: value = sum(proj * node value); d(node) += g * proj
inline int weighted_sum_node(cyclenet::Tape& tape, int node, cyclenet::Tensor proj) {
  const cyclenet::Tensor& v = tape.value(node);
  double acc = 0.0;
  for (size_t i = 0; i < v.size(); ++i) acc += proj[i] * v[i];
  auto proj_copy = std::make_shared<cyclenet::Tensor>(std::move(proj));
  return tape.add_op(cyclenet::Tensor({1}, {acc}), "weighted_sum",
                     [node, proj_copy](cyclenet::Tape& t, int out_id) {
                       double g = t.grad(out_id)[0];
                       cyclenet::Tensor& d = t.grad(node);
                       for (size_t i = 0; i < d.size(); ++i) d[i] += g * (*proj_copy)[i];
                     });
}

}  // namespace testing

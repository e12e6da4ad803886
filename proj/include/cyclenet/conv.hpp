#pragma once

#include <vector>

#include "cyclenet/tensor.hpp"

namespace cyclenet {

enum class Pad { Same, Valid };

// Square k x k kernel over the two locally convolved axes of a plane, fully
// connected over the remaining axis. Weight layout (k, k, c_out, c_in):
//   (x,y) plane: (dx, dy, z_out, z_in)
//   (x,z) plane: (dx, dz, y_out, y_in)
//   (y,z) plane: (dy, dz, x_out, x_in)
// Displacements are centered: axis offset = d - k/2 for d in [0, k), so
// 'same' zero padding preserves the convolved extents (even k is left-biased).
struct ConvKernel {
  int k = 0;
  Tensor weights;             // (k, k, c_out, c_in)
  std::vector<double> bias;   // length c_out; empty = no bias

  ConvKernel() = default;
  ConvKernel(int k, int c_out, int c_in, bool with_bias = true);

  int c_out() const { return weights.extent(2); }
  int c_in() const { return weights.extent(3); }
  void validate() const;
};

// Single-sample entry points; input axes (x, y, z).
// out(x,y,z) = bias[z] + sum_{dx,dy,z'} K(dx,dy,z,z') in(x+dx,y+dy,z')
Tensor conv2d_xy(const Tensor& in, const ConvKernel& kernel, Pad pad = Pad::Same);
// out(x,y,z) = bias[y] + sum_{dx,y',dz} K(dx,dz,y,y') in(x+dx,y',z+dz); 'same' only
Tensor conv2d_xz(const Tensor& in, const ConvKernel& kernel);
// out(x,y,z) = bias[x] + sum_{x',dy,dz} K(dy,dz,x,x') in(x',y+dy,z+dz); 'same' only
Tensor conv2d_yz(const Tensor& in, const ConvKernel& kernel);

// Batched variants; input (n, x, y, z). These are the OpenMP-parallel kernels
// used by the layers. Parallel loops run only over independent output (or
// gradient) elements, so results are identical for any thread count.
Tensor conv2d_xy_batch(const Tensor& in, const ConvKernel& kernel, Pad pad);
Tensor conv2d_xz_batch(const Tensor& in, const ConvKernel& kernel);
Tensor conv2d_yz_batch(const Tensor& in, const ConvKernel& kernel);

// Backward kernels. Each output pointer may be null to skip that gradient;
// d_in, d_weights and d_bias all accumulate (+=) into buffers of matching
// shape, so callers pass zero-filled buffers for a fresh gradient.
void conv2d_xy_backward(const Tensor& in, const ConvKernel& kernel, Pad pad, const Tensor& d_out,
                        Tensor* d_in, Tensor* d_weights, std::vector<double>* d_bias);
void conv2d_xz_backward(const Tensor& in, const ConvKernel& kernel, const Tensor& d_out,
                        Tensor* d_in, Tensor* d_weights, std::vector<double>* d_bias);
void conv2d_yz_backward(const Tensor& in, const ConvKernel& kernel, const Tensor& d_out,
                        Tensor* d_in, Tensor* d_weights, std::vector<double>* d_bias);

namespace ref {

// Serial reference implementations: direct summation, no blocking, no
// threading. Kept as the oracle the parallel kernels are tested against and
// as the baseline for the conv_bench tool.
Tensor conv2d_xy(const Tensor& in, const ConvKernel& kernel, Pad pad = Pad::Same);
Tensor conv2d_xz(const Tensor& in, const ConvKernel& kernel);
Tensor conv2d_yz(const Tensor& in, const ConvKernel& kernel);

}  // namespace ref

}  // namespace cyclenet

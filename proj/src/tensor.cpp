#include "cyclenet/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace cyclenet {

namespace {

size_t checked_numel(const std::vector<int>& shape) {
  if (shape.empty() || shape.size() > 4)
    throw std::invalid_argument("Tensor: rank must be 1..4, got " + shape_to_string(shape));
  size_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::invalid_argument("Tensor: nonpositive extent in " + shape_to_string(shape));
    n *= size_t(e);
  }
  return n;
}

void row_major_strides(const std::vector<int>& shape, size_t* strides) {
  size_t s = 1;
  for (int d = int(shape.size()) - 1; d >= 0; --d) {
    strides[d] = s;
    s *= size_t(shape[size_t(d)]);
  }
}

}  // namespace

std::string shape_to_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != data_.size())
    throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

size_t Tensor::index(std::initializer_list<int> idx) const {
  if (int(idx.size()) != rank())
    throw std::out_of_range("Tensor::index: rank mismatch for shape " + shape_to_string(shape_));
  size_t flat = 0;
  int d = 0;
  for (int i : idx) {
    if (i < 0 || i >= shape_[size_t(d)])
      throw std::out_of_range("Tensor::index: axis " + std::to_string(d) + " index " +
                              std::to_string(i) + " out of bounds for " + shape_to_string(shape_));
    flat = flat * size_t(shape_[size_t(d)]) + size_t(i);
    ++d;
  }
  return flat;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::min() const { return *std::min_element(data_.begin(), data_.end()); }

double Tensor::max() const { return *std::max_element(data_.begin(), data_.end()); }

bool AxisPermutation::is_valid() const {
  std::vector<bool> seen(perm.size(), false);
  for (int a : perm) {
    if (a < 0 || a >= int(perm.size()) || seen[size_t(a)]) return false;
    seen[size_t(a)] = true;
  }
  return true;
}

AxisPermutation inverse(const AxisPermutation& p) {
  if (!p.is_valid()) throw std::invalid_argument("inverse: not a permutation");
  AxisPermutation inv;
  inv.perm.resize(p.perm.size());
  for (int d = 0; d < p.rank(); ++d) inv.perm[size_t(p.perm[size_t(d)])] = d;
  return inv;
}

AxisPermutation compose(const AxisPermutation& second, const AxisPermutation& first) {
  if (!second.is_valid() || !first.is_valid() || second.rank() != first.rank())
    throw std::invalid_argument("compose: invalid permutations");
  AxisPermutation c;
  c.perm.resize(first.perm.size());
  for (int d = 0; d < first.rank(); ++d) c.perm[size_t(d)] = first.perm[size_t(second.perm[size_t(d)])];
  return c;
}

Tensor permute_axes(const Tensor& t, const AxisPermutation& p) {
  if (p.rank() != t.rank() || !p.is_valid())
    throw std::invalid_argument("permute_axes: permutation rank " + std::to_string(p.rank()) +
                                " does not match tensor rank " + std::to_string(t.rank()));
  std::vector<int> out_shape(size_t(t.rank()));
  for (int d = 0; d < t.rank(); ++d) out_shape[size_t(d)] = t.shape()[size_t(p.perm[size_t(d)])];
  Tensor out(out_shape);

  size_t in_strides[4];
  row_major_strides(t.shape(), in_strides);
  // stride of output axis d in the input layout
  size_t src_stride[4];
  for (int d = 0; d < t.rank(); ++d) src_stride[d] = in_strides[p.perm[size_t(d)]];

  const double* src = t.data();
  double* dst = out.data();
  int r = t.rank();
  std::array<int, 4> ext{1, 1, 1, 1};
  std::array<size_t, 4> st{0, 0, 0, 0};
  // right-align so the loop nest below covers every rank
  for (int d = 0; d < r; ++d) {
    ext[size_t(4 - r + d)] = out_shape[size_t(d)];
    st[size_t(4 - r + d)] = src_stride[d];
  }
  size_t o = 0;
  for (int i0 = 0; i0 < ext[0]; ++i0)
    for (int i1 = 0; i1 < ext[1]; ++i1)
      for (int i2 = 0; i2 < ext[2]; ++i2) {
        size_t base = size_t(i0) * st[0] + size_t(i1) * st[1] + size_t(i2) * st[2];
        size_t s3 = st[3];
        for (int i3 = 0; i3 < ext[3]; ++i3) dst[o++] = src[base + size_t(i3) * s3];
      }
  return out;
}

Tensor zero_pad(const Tensor& t, const std::vector<std::pair<int, int>>& pads) {
  if (int(pads.size()) != t.rank()) throw std::invalid_argument("zero_pad: one (before,after) pair per axis");
  std::vector<int> out_shape(size_t(t.rank()));
  for (int d = 0; d < t.rank(); ++d) {
    auto [b, a] = pads[size_t(d)];
    if (b < 0 || a < 0) throw std::invalid_argument("zero_pad: pads must be nonnegative");
    out_shape[size_t(d)] = t.shape()[size_t(d)] + b + a;
  }
  Tensor out(out_shape);
  size_t in_strides[4], out_strides[4];
  row_major_strides(t.shape(), in_strides);
  row_major_strides(out_shape, out_strides);

  int r = t.rank();
  std::array<int, 4> ext{1, 1, 1, 1};
  std::array<int, 4> off{0, 0, 0, 0};
  std::array<size_t, 4> ist{0, 0, 0, 0}, ost{0, 0, 0, 0};
  for (int d = 0; d < r; ++d) {
    ext[size_t(4 - r + d)] = t.shape()[size_t(d)];
    off[size_t(4 - r + d)] = pads[size_t(d)].first;
    ist[size_t(4 - r + d)] = in_strides[d];
    ost[size_t(4 - r + d)] = out_strides[d];
  }
  const double* src = t.data();
  double* dst = out.data();
  for (int i0 = 0; i0 < ext[0]; ++i0)
    for (int i1 = 0; i1 < ext[1]; ++i1)
      for (int i2 = 0; i2 < ext[2]; ++i2) {
        size_t si = size_t(i0) * ist[0] + size_t(i1) * ist[1] + size_t(i2) * ist[2];
        size_t di = size_t(i0 + off[0]) * ost[0] + size_t(i1 + off[1]) * ost[1] +
                    size_t(i2 + off[2]) * ost[2] + size_t(off[3]) * 1;
        std::memcpy(dst + di, src + si, size_t(ext[3]) * sizeof(double));
      }
  return out;
}

Tensor crop(const Tensor& t, const std::vector<std::pair<int, int>>& pads) {
  if (int(pads.size()) != t.rank()) throw std::invalid_argument("crop: one (before,after) pair per axis");
  std::vector<int> out_shape(size_t(t.rank()));
  for (int d = 0; d < t.rank(); ++d) {
    auto [b, a] = pads[size_t(d)];
    if (b < 0 || a < 0) throw std::invalid_argument("crop: pads must be nonnegative");
    out_shape[size_t(d)] = t.shape()[size_t(d)] - b - a;
    if (out_shape[size_t(d)] <= 0) throw std::invalid_argument("crop: pads exceed extent");
  }
  Tensor out(out_shape);
  size_t in_strides[4], out_strides[4];
  row_major_strides(t.shape(), in_strides);
  row_major_strides(out_shape, out_strides);
  int r = t.rank();
  std::array<int, 4> ext{1, 1, 1, 1};
  std::array<int, 4> off{0, 0, 0, 0};
  std::array<size_t, 4> ist{0, 0, 0, 0}, ost{0, 0, 0, 0};
  for (int d = 0; d < r; ++d) {
    ext[size_t(4 - r + d)] = out_shape[size_t(d)];
    off[size_t(4 - r + d)] = pads[size_t(d)].first;
    ist[size_t(4 - r + d)] = in_strides[d];
    ost[size_t(4 - r + d)] = out_strides[d];
  }
  const double* src = t.data();
  double* dst = out.data();
  for (int i0 = 0; i0 < ext[0]; ++i0)
    for (int i1 = 0; i1 < ext[1]; ++i1)
      for (int i2 = 0; i2 < ext[2]; ++i2) {
        size_t si = size_t(i0 + off[0]) * ist[0] + size_t(i1 + off[1]) * ist[1] +
                    size_t(i2 + off[2]) * ist[2] + size_t(off[3]);
        size_t di = size_t(i0) * ost[0] + size_t(i1) * ost[1] + size_t(i2) * ost[2];
        std::memcpy(dst + di, src + si, size_t(ext[3]) * sizeof(double));
      }
  return out;
}

namespace {

struct AxisLerp {
  std::vector<int> lo, hi;
  std::vector<double> w_hi;  // weight of the hi sample; lo gets 1 - w_hi
};

AxisLerp axis_lerp(int in_extent, int out_extent) {
  AxisLerp a;
  a.lo.resize(size_t(out_extent));
  a.hi.resize(size_t(out_extent));
  a.w_hi.resize(size_t(out_extent));
  for (int i = 0; i < out_extent; ++i) {
    double c = 0.0;
    if (out_extent > 1) c = double(i) * double(in_extent - 1) / double(out_extent - 1);
    int lo = int(c);
    if (lo > in_extent - 1) lo = in_extent - 1;
    int hi = std::min(lo + 1, in_extent - 1);
    a.lo[size_t(i)] = lo;
    a.hi[size_t(i)] = hi;
    a.w_hi[size_t(i)] = c - double(lo);
  }
  return a;
}

}  // namespace

Tensor trilinear_resize(const Tensor& t, const std::array<int, 3>& new_shape) {
  if (t.rank() != 3) throw std::invalid_argument("trilinear_resize: tensor must have 3 axes");
  for (int e : new_shape)
    if (e <= 0) throw std::invalid_argument("trilinear_resize: target extents must be positive");

  const int X = t.extent(0), Y = t.extent(1), Z = t.extent(2);
  const int Xo = new_shape[0], Yo = new_shape[1], Zo = new_shape[2];
  AxisLerp ax = axis_lerp(X, Xo), ay = axis_lerp(Y, Yo), az = axis_lerp(Z, Zo);

  Tensor out({Xo, Yo, Zo});
  const double* src = t.data();
  double* dst = out.data();
  for (int i = 0; i < Xo; ++i) {
    double wx = ax.w_hi[size_t(i)];
    const double* px0 = src + size_t(ax.lo[size_t(i)]) * size_t(Y) * size_t(Z);
    const double* px1 = src + size_t(ax.hi[size_t(i)]) * size_t(Y) * size_t(Z);
    for (int j = 0; j < Yo; ++j) {
      double wy = ay.w_hi[size_t(j)];
      const double* p00 = px0 + size_t(ay.lo[size_t(j)]) * size_t(Z);
      const double* p01 = px0 + size_t(ay.hi[size_t(j)]) * size_t(Z);
      const double* p10 = px1 + size_t(ay.lo[size_t(j)]) * size_t(Z);
      const double* p11 = px1 + size_t(ay.hi[size_t(j)]) * size_t(Z);
      double* orow = dst + (size_t(i) * size_t(Yo) + size_t(j)) * size_t(Zo);
      for (int l = 0; l < Zo; ++l) {
        double wz = az.w_hi[size_t(l)];
        int z0 = az.lo[size_t(l)], z1 = az.hi[size_t(l)];
        double v00 = p00[z0] * (1.0 - wz) + p00[z1] * wz;
        double v01 = p01[z0] * (1.0 - wz) + p01[z1] * wz;
        double v10 = p10[z0] * (1.0 - wz) + p10[z1] * wz;
        double v11 = p11[z0] * (1.0 - wz) + p11[z1] * wz;
        double v0 = v00 * (1.0 - wy) + v01 * wy;
        double v1 = v10 * (1.0 - wy) + v11 * wy;
        orow[l] = v0 * (1.0 - wx) + v1 * wx;
      }
    }
  }
  return out;
}

}  // namespace cyclenet

#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

namespace cyclenet {

// Dense row-major tensor of doubles, rank 1..4. The last axis varies fastest.
// Activation tensors use the fixed axis order (x, y, z) = (horizontal,
// vertical, feature); batched activations prepend a sample axis (n, x, y, z).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor full(std::vector<int> shape, double value);

  int rank() const { return int(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int extent(int axis) const { return shape_[size_t(axis)]; }
  size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  // Bounds-checked row-major flat index; throws std::out_of_range.
  size_t index(std::initializer_list<int> idx) const;

  double at(std::initializer_list<int> idx) const { return data_[index(idx)]; }
  double& at(std::initializer_list<int> idx) { return data_[index(idx)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(double v);
  double sum() const;
  double min() const;
  double max() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_to_string(const std::vector<int>& shape);

// Bijection on axis indices. perm[d] names the source axis that lands on
// output axis d, so out.shape[d] = in.shape[perm[d]].
struct AxisPermutation {
  std::vector<int> perm;

  AxisPermutation() = default;
  AxisPermutation(std::initializer_list<int> p) : perm(p) {}
  explicit AxisPermutation(std::vector<int> p) : perm(std::move(p)) {}

  int rank() const { return int(perm.size()); }
  bool is_valid() const;
};

AxisPermutation inverse(const AxisPermutation& p);
// Permutation equivalent to applying `first`, then `second`.
AxisPermutation compose(const AxisPermutation& second, const AxisPermutation& first);

Tensor permute_axes(const Tensor& t, const AxisPermutation& p);

// Per-axis (before, after) zero padding.
Tensor zero_pad(const Tensor& t, const std::vector<std::pair<int, int>>& pads);
// Inverse of zero_pad with the same pads.
Tensor crop(const Tensor& t, const std::vector<std::pair<int, int>>& pads);

// Separable linear interpolation of a rank-3 tensor under the align-corners
// convention: source coordinate = i * (in-1) / (out-1), and an output axis of
// extent 1 samples source index 0. Exact identity when shapes match.
Tensor trilinear_resize(const Tensor& t, const std::array<int, 3>& new_shape);

}  // namespace cyclenet

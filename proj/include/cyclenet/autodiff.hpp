#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cyclenet/conv.hpp"
#include "cyclenet/rng.hpp"
#include "cyclenet/tensor.hpp"

namespace cyclenet {

enum class Mode { Train, Eval };

// Named trainable tensor with its gradient buffer.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

// Boolean grid over the per-sample coordinates of one activation tensor;
// used for structural dependency propagation.
struct SupportGrid {
  std::vector<int> shape;
  std::vector<uint8_t> on;

  SupportGrid() = default;
  explicit SupportGrid(std::vector<int> s);
  size_t count() const;
  bool all() const;
};

// Ordered record of the primitive operations of one forward pass, holding the
// node values and saved state each backward closure needs. The reverse sweep
// visits ops exactly once, newest first.
class Tape {
 public:
  int push_leaf(Tensor value, const char* tag = "input");
  int add_op(Tensor value, const char* tag, std::function<void(Tape&, int)> backward);

  const Tensor& value(int node) const { return nodes_[size_t(node)].value; }
  const char* tag(int node) const { return nodes_[size_t(node)].tag; }
  int size() const { return int(nodes_.size()); }

  // Gradient buffer of a node, allocated to zeros on first access.
  Tensor& grad(int node);
  bool grad_allocated(int node) const { return nodes_[size_t(node)].grad.rank() > 0; }

  // Reverse sweep from `node` seeded with d(node) = seed (same shape as the
  // node's value). Throws std::logic_error before any forward op is recorded.
  void backward(int node, Tensor seed);
  // Convenience for a single-element node: seed = 1.
  void backward_scalar(int node);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // rank 0 until touched
    const char* tag;
  };
  struct Op {
    int output;
    std::function<void(Tape&, int)> bwd;
  };
  std::vector<Node> nodes_;
  std::vector<Op> ops_;
};

// One differentiable network stage. forward() consumes a tape node holding a
// batched value (leading sample axis) and pushes its output node.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  virtual int forward(Tape& tape, int in, Mode mode, SeededRng* rng) = 0;

  virtual std::vector<Param*> params() { return {}; }
  // non-trainable state saved in checkpoints (BatchNorm running stats)
  virtual std::vector<std::pair<std::string, Tensor*>> buffers() { return {}; }

  // per-sample output shape (no batch axis)
  virtual std::vector<int> output_shape(const std::vector<int>& in) const = 0;

  // Structural dependency: mark every input element some on-element of the
  // output can depend on. Default is elementwise identity.
  virtual void back_support(const SupportGrid& out, SupportGrid& in) const;

  const std::string& name() const { return name_; }
  void set_name(std::string n);

 protected:
  std::string name_;
};

enum class ConvPlane { XY, XZ, YZ };

const char* plane_name(ConvPlane plane);

class ConvLayer : public Layer {
 public:
  ConvLayer(ConvPlane plane, int k, int c_out, int c_in, Pad pad = Pad::Same);

  const char* kind() const override { return plane_name(plane_); }
  int forward(Tape& tape, int in, Mode mode, SeededRng* rng) override;
  std::vector<Param*> params() override { return {&weights_, &bias_}; }
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  void back_support(const SupportGrid& out, SupportGrid& in) const override;
  void init_weights(SeededRng& rng);

  ConvPlane plane() const { return plane_; }
  int k() const { return k_; }
  int c_out() const { return weights_.value.extent(2); }
  int c_in() const { return weights_.value.extent(3); }
  ConvKernel kernel_view() const;

 private:
  ConvPlane plane_;
  Pad pad_;
  int k_;
  Param weights_;  // (k, k, c_out, c_in)
  Param bias_;     // (c_out)
};

class BatchNormLayer : public Layer {
 public:
  BatchNormLayer(int features, double epsilon = 1e-5, double momentum = 0.9);

  const char* kind() const override { return "batch_norm"; }
  int forward(Tape& tape, int in, Mode mode, SeededRng* rng) override;
  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Tensor*>> buffers() override;
  std::vector<int> output_shape(const std::vector<int>& in) const override { return in; }

  int features() const { return features_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  int features_;
  double epsilon_;
  double momentum_;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
};

class ReluLayer : public Layer {
 public:
  const char* kind() const override { return "relu"; }
  int forward(Tape& tape, int in, Mode mode, SeededRng* rng) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override { return in; }
};

class DropoutLayer : public Layer {
 public:
  explicit DropoutLayer(double rate);
  const char* kind() const override { return "dropout"; }
  int forward(Tape& tape, int in, Mode mode, SeededRng* rng) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override { return in; }
  double rate() const { return rate_; }

 private:
  double rate_;
};

class TrilinearResizeLayer : public Layer {
 public:
  explicit TrilinearResizeLayer(std::array<int, 3> target);
  const char* kind() const override { return "resize"; }
  int forward(Tape& tape, int in, Mode mode, SeededRng* rng) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  void back_support(const SupportGrid& out, SupportGrid& in) const override;
  const std::array<int, 3>& target() const { return target_; }

 private:
  std::array<int, 3> target_;
};

class GlobalPoolLayer : public Layer {
 public:
  const char* kind() const override { return "global_pool"; }
  int forward(Tape& tape, int in, Mode mode, SeededRng* rng) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  void back_support(const SupportGrid& out, SupportGrid& in) const override;
};

class FlattenLayer : public Layer {
 public:
  const char* kind() const override { return "flatten"; }
  int forward(Tape& tape, int in, Mode mode, SeededRng* rng) override;
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  void back_support(const SupportGrid& out, SupportGrid& in) const override;
};

class DenseLayer : public Layer {
 public:
  DenseLayer(int out_features, int in_features);
  const char* kind() const override { return "dense"; }
  int forward(Tape& tape, int in, Mode mode, SeededRng* rng) override;
  std::vector<Param*> params() override { return {&weights_, &bias_}; }
  std::vector<int> output_shape(const std::vector<int>& in) const override;
  void back_support(const SupportGrid& out, SupportGrid& in) const override;
  void init_weights(SeededRng& rng);

  int in_features() const { return weights_.value.extent(1); }
  int out_features() const { return weights_.value.extent(0); }

 private:
  Param weights_;  // (out, in)
  Param bias_;     // (out)
};

// Per-sample stable softmax cross-entropy with L2 penalty:
//   -log softmax(logits)[label] + lambda * sum(params^2)
double softmax_cross_entropy_l2(const std::vector<double>& logits, int label,
                                const std::vector<const Tensor*>& params, double lambda);

// Batched training loss on the tape: mean over samples of the stable
// cross-entropy plus one lambda * sum(params^2) penalty. Backward writes
// logits gradients and adds 2*lambda*w into each param's grad buffer.
int softmax_cross_entropy_loss(Tape& tape, int logits_node, const std::vector<int>& labels,
                               double lambda, const std::vector<Param*>& l2_params);

// Fan-in scaled uniform draw: bound = sqrt(6 / fan_in).
void fan_in_uniform_init(Tensor& w, int fan_in, SeededRng& rng);

}  // namespace cyclenet

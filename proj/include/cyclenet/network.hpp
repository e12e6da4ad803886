#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "cyclenet/autodiff.hpp"

namespace cyclenet {

enum class CycleKind { Orthogonal, Standard };
enum class Head { GlobalPool, Flatten };

// One cycle: three convolutions, each followed by BatchNorm, ReLU and
// Dropout (the dropout stage is omitted when the rate is zero). Orthogonal
// cycles convolve the planes (x,y), (x,z), (y,z) in that fixed order; standard
// cycles convolve (x,y) three times.
struct CycleSpec {
  CycleKind kind = CycleKind::Orthogonal;
  int kernel_size = 3;
  bool cubic = true;
  int width = 0;  // cubic tensor width; the cycle runs at (width, width, width)
  // Non-cubic: output extent of each layer's fully connected axis, in layer
  // order. Orthogonal: (z after layer 1, y after layer 2, x after layer 3);
  // standard: the three successive feature widths.
  std::array<int, 3> out_extents{0, 0, 0};
  double dropout_rate = 0.0;
};

struct NetworkSpec {
  std::array<int, 3> input_shape{0, 0, 0};  // (x, y, channels)
  int first_conv_features = 0;
  int first_conv_kernel = 3;
  std::vector<CycleSpec> cycles;
  Head head = Head::Flatten;
  int n_classes = 0;
};

// Structural description of every stage a spec expands to; shared by the
// builder and the parameter counter so both always agree.
struct LayerPlan {
  enum class Type { Conv, BatchNorm, Relu, Dropout, Resize, GlobalPool, Flatten, Dense };
  Type type = Type::Conv;
  std::string name;
  int cycle = 0;  // 0 = outside any cycle (first conv, head)
  // conv fields
  ConvPlane plane = ConvPlane::XY;
  int k = 0, c_in = 0, c_out = 0;
  // dense fields reuse c_in/c_out; resize target below
  std::array<int, 3> resize_target{0, 0, 0};
  double dropout_rate = 0.0;
  std::vector<int> in_shape, out_shape;  // per-sample shapes
};

std::vector<LayerPlan> plan_network(const NetworkSpec& spec);

class Network {
 public:
  Network() = default;
  explicit Network(const NetworkSpec& spec);

  void init_weights(SeededRng& rng);

  struct Trace {
    int input = -1;
    std::vector<int> layer_out;
    int logits = -1;
  };
  // batch: (n, x, y, channels) matching the spec input shape
  Trace forward(Tape& tape, Tensor batch, Mode mode, SeededRng* dropout_rng);

  std::vector<Param*> params();
  std::vector<Param*> l2_params();  // convolution and dense weight tensors only
  std::vector<std::pair<std::string, Tensor*>> buffers();
  void zero_grads();

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
  const std::vector<LayerPlan>& plan() const { return plan_; }
  // per-sample output shape of each layer
  const std::vector<std::vector<int>>& layer_shapes() const { return shapes_; }

  int first_conv_layer() const { return 0; }
  // index of each cycle's final layer, in cycle order
  const std::vector<int>& cycle_output_layers() const { return cycle_outputs_; }

 private:
  NetworkSpec spec_;
  std::vector<LayerPlan> plan_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::vector<int>> shapes_;
  std::vector<int> cycle_outputs_;
};

Network build_network(const NetworkSpec& spec);

// Layer sequence of a single cycle operating on in_shape; exposed for
// structural tests. The returned layers are named c<index>.*.
std::vector<std::unique_ptr<Layer>> build_cycle(const CycleSpec& spec,
                                                const std::array<int, 3>& in_shape,
                                                int cycle_index = 1);

// m standard cycles followed by n orthogonal ones, all cubic at the given
// widths (size m+n). Fields other than `cycles` are copied from `base`.
NetworkSpec build_hybrid(int m_standard, int n_orthogonal, const std::vector<int>& widths, int k,
                         NetworkSpec base = {});

struct LayerCount {
  std::string name;
  long long weight_params = 0;  // convolution kernels and dense weight matrices
  long long bias_params = 0;    // conv/dense biases, BatchNorm gamma+beta
  long long macs = 0;           // multiply-accumulate operations per sample
};

struct ParamCount {
  std::vector<LayerCount> layers;
  long long weight_total = 0;
  long long bias_total = 0;
  long long mac_total = 0;
};

ParamCount count_params(const NetworkSpec& spec);

// Dense operator equivalent to one linear cycle of 1x1 kernels (no bias,
// BatchNorm/ReLU/Dropout replaced by identity). Kernels map features
// z_in->z1 (K1, plane xy), y_in->y1 (K2, plane xz), x_in->x1 (K3, plane yz).
// Returns the (x1*y1*z1) x (x_in*y_in*z_in) matrix over row-major flattening,
// D[(x,y,z),(x',y',z')] = K3(x,x') * K2(y,y') * K1(z,z').
Tensor cycle_dense_equivalent(const ConvKernel& k1, const ConvKernel& k2, const ConvKernel& k3);

}  // namespace cyclenet

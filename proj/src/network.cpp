#include "cyclenet/network.hpp"

#include <stdexcept>

namespace cyclenet {

namespace {

std::string cycle_label(int index) { return "c" + std::to_string(index); }

void validate_spec_header(const NetworkSpec& spec) {
  for (int e : spec.input_shape)
    if (e <= 0)
      throw std::invalid_argument("network spec: input_shape must be positive, got " +
                                  shape_to_string({spec.input_shape[0], spec.input_shape[1],
                                                   spec.input_shape[2]}));
  if (spec.first_conv_features <= 0)
    throw std::invalid_argument("network spec: first_conv_features must be positive");
  if (spec.first_conv_kernel < 1)
    throw std::invalid_argument("network spec: first_conv_kernel must be >= 1");
  if (spec.n_classes <= 0) throw std::invalid_argument("network spec: n_classes must be positive");
}

std::array<int, 3> cycle_layer_targets(const CycleSpec& c, int cycle_index) {
  if (c.kernel_size < 1)
    throw std::invalid_argument(cycle_label(cycle_index) + ": kernel_size must be >= 1");
  if (c.dropout_rate < 0.0 || c.dropout_rate >= 1.0)
    throw std::invalid_argument(cycle_label(cycle_index) + ": dropout_rate must be in [0,1)");
  if (c.cubic) {
    if (c.width <= 0) throw std::invalid_argument(cycle_label(cycle_index) + ": width must be positive");
    return {c.width, c.width, c.width};
  }
  for (int e : c.out_extents)
    if (e <= 0)
      throw std::invalid_argument(cycle_label(cycle_index) + ": out_extents must be positive");
  return c.out_extents;
}

struct PlanBuilder {
  std::vector<LayerPlan> plan;
  std::vector<int> shape;
  int index = 0;

  std::string next_name(const std::string& stem) {
    return "L" + std::string(index < 10 ? "0" : "") + std::to_string(index) + "." + stem;
  }

  LayerPlan& push(LayerPlan::Type type, const std::string& stem, int cycle) {
    LayerPlan p;
    p.type = type;
    p.name = next_name(stem);
    p.cycle = cycle;
    p.in_shape = shape;
    plan.push_back(std::move(p));
    ++index;
    return plan.back();
  }
};

void plan_conv(PlanBuilder& b, const std::string& stem, int cycle, ConvPlane plane, int k,
               int c_out) {
  LayerPlan& p = b.push(LayerPlan::Type::Conv, stem, cycle);
  p.plane = plane;
  p.k = k;
  p.c_out = c_out;
  const std::vector<int>& s = p.in_shape;
  switch (plane) {
    case ConvPlane::XY:
      p.c_in = s[2];
      p.out_shape = {s[0], s[1], c_out};
      break;
    case ConvPlane::XZ:
      p.c_in = s[1];
      p.out_shape = {s[0], c_out, s[2]};
      break;
    case ConvPlane::YZ:
      p.c_in = s[0];
      p.out_shape = {c_out, s[1], s[2]};
      break;
  }
  b.shape = p.out_shape;
}

void plan_triplet_tail(PlanBuilder& b, int cycle, double dropout_rate) {
  LayerPlan& bn = b.push(LayerPlan::Type::BatchNorm, cycle_label(cycle) + ".bn", cycle);
  bn.c_in = bn.c_out = bn.in_shape[2];
  bn.out_shape = bn.in_shape;
  LayerPlan& re = b.push(LayerPlan::Type::Relu, cycle_label(cycle) + ".relu", cycle);
  re.out_shape = re.in_shape;
  if (dropout_rate > 0.0) {
    LayerPlan& dr = b.push(LayerPlan::Type::Dropout, cycle_label(cycle) + ".dropout", cycle);
    dr.dropout_rate = dropout_rate;
    dr.out_shape = dr.in_shape;
  }
}

void plan_cycle(PlanBuilder& b, const CycleSpec& c, int cycle_index) {
  std::array<int, 3> targets = cycle_layer_targets(c, cycle_index);
  const std::string label = cycle_label(cycle_index);

  if (c.cubic) {
    std::array<int, 3> want{c.width, c.width, c.width};
    if (b.shape != std::vector<int>{want[0], want[1], want[2]}) {
      LayerPlan& r = b.push(LayerPlan::Type::Resize, label + ".resize", cycle_index);
      r.resize_target = want;
      r.out_shape = {want[0], want[1], want[2]};
      b.shape = r.out_shape;
    }
  }

  const bool ortho = c.kind == CycleKind::Orthogonal;
  const ConvPlane planes[3] = {ConvPlane::XY, ortho ? ConvPlane::XZ : ConvPlane::XY,
                               ortho ? ConvPlane::YZ : ConvPlane::XY};
  const char* stems[3] = {"conv1", "conv2", "conv3"};
  for (int i = 0; i < 3; ++i) {
    plan_conv(b, label + "." + stems[i] + "_" + (plane_name(planes[i]) + 5), cycle_index,
              planes[i], c.kernel_size, targets[size_t(i)]);
    plan_triplet_tail(b, cycle_index, c.dropout_rate);
  }
}

}  // namespace

std::vector<LayerPlan> plan_network(const NetworkSpec& spec) {
  validate_spec_header(spec);
  PlanBuilder b;
  b.shape = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};

  plan_conv(b, "first_conv", 0, ConvPlane::XY, spec.first_conv_kernel, spec.first_conv_features);

  for (size_t c = 0; c < spec.cycles.size(); ++c) plan_cycle(b, spec.cycles[c], int(c) + 1);

  if (spec.head == Head::GlobalPool) {
    LayerPlan& p = b.push(LayerPlan::Type::GlobalPool, "pool", 0);
    p.out_shape = {p.in_shape[2]};
    b.shape = p.out_shape;
  } else {
    LayerPlan& p = b.push(LayerPlan::Type::Flatten, "flatten", 0);
    int n = 1;
    for (int e : p.in_shape) n *= e;
    p.out_shape = {n};
    b.shape = p.out_shape;
  }
  LayerPlan& d = b.push(LayerPlan::Type::Dense, "dense", 0);
  d.c_in = d.in_shape[0];
  d.c_out = spec.n_classes;
  d.out_shape = {spec.n_classes};
  return b.plan;
}

namespace {

std::unique_ptr<Layer> realize(const LayerPlan& p) {
  std::unique_ptr<Layer> layer;
  switch (p.type) {
    case LayerPlan::Type::Conv:
      layer = std::make_unique<ConvLayer>(p.plane, p.k, p.c_out, p.c_in);
      break;
    case LayerPlan::Type::BatchNorm:
      layer = std::make_unique<BatchNormLayer>(p.c_in);
      break;
    case LayerPlan::Type::Relu:
      layer = std::make_unique<ReluLayer>();
      break;
    case LayerPlan::Type::Dropout:
      layer = std::make_unique<DropoutLayer>(p.dropout_rate);
      break;
    case LayerPlan::Type::Resize:
      layer = std::make_unique<TrilinearResizeLayer>(p.resize_target);
      break;
    case LayerPlan::Type::GlobalPool:
      layer = std::make_unique<GlobalPoolLayer>();
      break;
    case LayerPlan::Type::Flatten:
      layer = std::make_unique<FlattenLayer>();
      break;
    case LayerPlan::Type::Dense:
      layer = std::make_unique<DenseLayer>(p.c_out, p.c_in);
      break;
  }
  layer->set_name(p.name);
  return layer;
}

}  // namespace

Network::Network(const NetworkSpec& spec) : spec_(spec), plan_(plan_network(spec)) {
  for (const LayerPlan& p : plan_) {
    layers_.push_back(realize(p));
    // chain per-sample shapes through the real layers as a consistency check
    std::vector<int> got = layers_.back()->output_shape(p.in_shape);
    if (got != p.out_shape)
      throw std::logic_error(p.name + ": plan shape " + shape_to_string(p.out_shape) +
                             " disagrees with layer shape " + shape_to_string(got));
    shapes_.push_back(got);
  }
  int current_cycle = 0;
  for (size_t i = 0; i < plan_.size(); ++i) {
    if (plan_[i].cycle > current_cycle) current_cycle = plan_[i].cycle;
    if (plan_[i].cycle > 0 &&
        (i + 1 == plan_.size() || plan_[i + 1].cycle != plan_[i].cycle))
      cycle_outputs_.push_back(int(i));
  }
}

void Network::init_weights(SeededRng& rng) {
  for (auto& l : layers_) {
    if (auto* conv = dynamic_cast<ConvLayer*>(l.get())) conv->init_weights(rng);
    if (auto* dense = dynamic_cast<DenseLayer*>(l.get())) dense->init_weights(rng);
  }
}

Network::Trace Network::forward(Tape& tape, Tensor batch, Mode mode, SeededRng* dropout_rng) {
  if (batch.rank() != 4 || batch.extent(1) != spec_.input_shape[0] ||
      batch.extent(2) != spec_.input_shape[1] || batch.extent(3) != spec_.input_shape[2])
    throw std::invalid_argument("Network::forward: batch shape " + shape_to_string(batch.shape()) +
                                " does not match spec input " +
                                shape_to_string({spec_.input_shape[0], spec_.input_shape[1],
                                                 spec_.input_shape[2]}));
  Trace trace;
  trace.input = tape.push_leaf(std::move(batch));
  int node = trace.input;
  for (auto& l : layers_) {
    node = l->forward(tape, node, mode, dropout_rng);
    trace.layer_out.push_back(node);
  }
  trace.logits = node;
  return trace;
}

std::vector<Param*> Network::params() {
  std::vector<Param*> out;
  for (auto& l : layers_)
    for (Param* p : l->params()) out.push_back(p);
  return out;
}

std::vector<Param*> Network::l2_params() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    if (auto* conv = dynamic_cast<ConvLayer*>(l.get())) out.push_back(conv->params()[0]);
    if (auto* dense = dynamic_cast<DenseLayer*>(l.get())) out.push_back(dense->params()[0]);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Network::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& l : layers_)
    for (auto& b : l->buffers()) out.push_back(b);
  return out;
}

void Network::zero_grads() {
  for (Param* p : params()) p->zero_grad();
}

Network build_network(const NetworkSpec& spec) { return Network(spec); }

std::vector<std::unique_ptr<Layer>> build_cycle(const CycleSpec& spec,
                                                const std::array<int, 3>& in_shape,
                                                int cycle_index) {
  if (spec.cubic) {
    std::array<int, 3> want{spec.width, spec.width, spec.width};
    if (in_shape != want)
      throw std::invalid_argument(cycle_label(cycle_index) + ": cubic cycle of width " +
                                  std::to_string(spec.width) + " cannot consume input " +
                                  shape_to_string({in_shape[0], in_shape[1], in_shape[2]}));
  }
  PlanBuilder b;
  b.shape = {in_shape[0], in_shape[1], in_shape[2]};
  std::array<int, 3> targets = cycle_layer_targets(spec, cycle_index);
  const bool ortho = spec.kind == CycleKind::Orthogonal;
  const ConvPlane planes[3] = {ConvPlane::XY, ortho ? ConvPlane::XZ : ConvPlane::XY,
                               ortho ? ConvPlane::YZ : ConvPlane::XY};
  const char* stems[3] = {"conv1", "conv2", "conv3"};
  for (int i = 0; i < 3; ++i) {
    plan_conv(b, cycle_label(cycle_index) + "." + stems[i] + "_" + (plane_name(planes[i]) + 5),
              cycle_index, planes[i], spec.kernel_size, targets[size_t(i)]);
    plan_triplet_tail(b, cycle_index, spec.dropout_rate);
  }
  std::vector<std::unique_ptr<Layer>> out;
  for (const LayerPlan& p : b.plan) out.push_back(realize(p));
  return out;
}

NetworkSpec build_hybrid(int m_standard, int n_orthogonal, const std::vector<int>& widths, int k,
                         NetworkSpec base) {
  if (m_standard < 0 || n_orthogonal < 0)
    throw std::invalid_argument("build_hybrid: cycle counts must be nonnegative");
  if (int(widths.size()) != m_standard + n_orthogonal)
    throw std::invalid_argument("build_hybrid: need one width per cycle, got " +
                                std::to_string(widths.size()));
  base.cycles.clear();
  for (int i = 0; i < m_standard + n_orthogonal; ++i) {
    CycleSpec c;
    c.kind = i < m_standard ? CycleKind::Standard : CycleKind::Orthogonal;
    c.kernel_size = k;
    c.cubic = true;
    c.width = widths[size_t(i)];
    base.cycles.push_back(c);
  }
  return base;
}

ParamCount count_params(const NetworkSpec& spec) {
  ParamCount out;
  for (const LayerPlan& p : plan_network(spec)) {
    LayerCount c;
    c.name = p.name;
    switch (p.type) {
      case LayerPlan::Type::Conv: {
        c.weight_params = (long long)p.k * p.k * p.c_in * p.c_out;
        c.bias_params = p.c_out;
        long long factor = 0;
        switch (p.plane) {
          case ConvPlane::XY: factor = (long long)p.out_shape[0] * p.out_shape[1]; break;
          case ConvPlane::XZ: factor = (long long)p.out_shape[0] * p.out_shape[2]; break;
          case ConvPlane::YZ: factor = (long long)p.out_shape[1] * p.out_shape[2]; break;
        }
        c.macs = c.weight_params * factor;
        break;
      }
      case LayerPlan::Type::Dense:
        c.weight_params = (long long)p.c_in * p.c_out;
        c.bias_params = p.c_out;
        c.macs = c.weight_params;
        break;
      case LayerPlan::Type::BatchNorm:
        c.bias_params = 2LL * p.c_in;
        break;
      default:
        break;
    }
    out.weight_total += c.weight_params;
    out.bias_total += c.bias_params;
    out.mac_total += c.macs;
    out.layers.push_back(std::move(c));
  }
  return out;
}

Tensor cycle_dense_equivalent(const ConvKernel& k1, const ConvKernel& k2, const ConvKernel& k3) {
  for (const ConvKernel* k : {&k1, &k2, &k3})
    if (k->k != 1)
      throw std::invalid_argument("cycle_dense_equivalent: only 1x1 kernels admit the dense form");
  const int Z1 = k1.c_out(), Zi = k1.c_in();
  const int Y1 = k2.c_out(), Yi = k2.c_in();
  const int X1 = k3.c_out(), Xi = k3.c_in();
  Tensor dense({X1 * Y1 * Z1, Xi * Yi * Zi});
  const double* w1 = k1.weights.data();
  const double* w2 = k2.weights.data();
  const double* w3 = k3.weights.data();
  for (int x = 0; x < X1; ++x)
    for (int y = 0; y < Y1; ++y)
      for (int z = 0; z < Z1; ++z) {
        double* row = dense.data() + (size_t(x) * Y1 * Z1 + size_t(y) * Z1 + size_t(z)) *
                                         size_t(Xi) * Yi * Zi;
        for (int xp = 0; xp < Xi; ++xp)
          for (int yp = 0; yp < Yi; ++yp)
            for (int zp = 0; zp < Zi; ++zp)
              row[size_t(xp) * Yi * Zi + size_t(yp) * Zi + size_t(zp)] =
                  w3[size_t(x) * Xi + size_t(xp)] *
                  (w2[size_t(y) * Yi + size_t(yp)] * w1[size_t(z) * Zi + size_t(zp)]);
      }
  return dense;
}

}  // namespace cyclenet

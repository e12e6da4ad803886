#include "cyclenet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace cyclenet {

// ---------------------------------------------------------------------------
// SupportGrid
// ---------------------------------------------------------------------------

SupportGrid::SupportGrid(std::vector<int> s) : shape(std::move(s)) {
  size_t n = 1;
  for (int e : shape) n *= size_t(e);
  on.assign(n, 0);
}

size_t SupportGrid::count() const {
  size_t c = 0;
  for (uint8_t v : on) c += v != 0;
  return c;
}

bool SupportGrid::all() const { return count() == on.size(); }

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

int Tape::push_leaf(Tensor value, const char* tag) {
  nodes_.push_back(Node{std::move(value), Tensor(), tag});
  return int(nodes_.size()) - 1;
}

int Tape::add_op(Tensor value, const char* tag, std::function<void(Tape&, int)> backward) {
  nodes_.push_back(Node{std::move(value), Tensor(), tag});
  int id = int(nodes_.size()) - 1;
  ops_.push_back(Op{id, std::move(backward)});
  return id;
}

Tensor& Tape::grad(int node) {
  Node& n = nodes_[size_t(node)];
  if (n.grad.rank() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(int node, Tensor seed) {
  if (ops_.empty()) throw std::logic_error("Tape::backward called before any forward op was recorded");
  if (node < 0 || node >= size()) throw std::invalid_argument("Tape::backward: node out of range");
  if (!seed.same_shape(nodes_[size_t(node)].value))
    throw std::invalid_argument("Tape::backward: seed shape does not match node value");
  grad(node) = std::move(seed);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (grad_allocated(it->output)) it->bwd(*this, it->output);
  }
}

void Tape::backward_scalar(int node) {
  if (node < 0 || node >= size()) throw std::invalid_argument("Tape::backward: node out of range");
  const Tensor& v = nodes_[size_t(node)].value;
  if (v.size() != 1) throw std::invalid_argument("Tape::backward_scalar: node is not a scalar");
  backward(node, Tensor::full(v.shape(), 1.0));
}

// ---------------------------------------------------------------------------
// Layer base
// ---------------------------------------------------------------------------

void Layer::back_support(const SupportGrid& out, SupportGrid& in) const {
  if (out.on.size() != in.on.size())
    throw std::invalid_argument(std::string(kind()) + ": identity support needs matching sizes");
  for (size_t i = 0; i < out.on.size(); ++i) in.on[i] |= out.on[i];
}

void Layer::set_name(std::string n) {
  name_ = std::move(n);
  for (Param* p : params()) p->name = name_ + "." + p->name;
}

const char* plane_name(ConvPlane plane) {
  switch (plane) {
    case ConvPlane::XY: return "conv_xy";
    case ConvPlane::XZ: return "conv_xz";
    case ConvPlane::YZ: return "conv_yz";
  }
  return "conv";
}

namespace {

Tensor batched(const Tensor& t, const char* who) {
  if (t.rank() != 4) throw std::invalid_argument(std::string(who) + ": expected (n,x,y,z) value");
  return t;
}

const char* layer_tag(const Layer& l) { return l.name().empty() ? l.kind() : l.name().c_str(); }

}  // namespace

void fan_in_uniform_init(Tensor& w, int fan_in, SeededRng& rng) {
  if (fan_in <= 0) throw std::invalid_argument("fan_in_uniform_init: fan_in must be positive");
  double bound = std::sqrt(6.0 / double(fan_in));
  for (size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------
// ConvLayer
// ---------------------------------------------------------------------------

ConvLayer::ConvLayer(ConvPlane plane, int k, int c_out, int c_in, Pad pad)
    : plane_(plane),
      pad_(pad),
      k_(k),
      weights_("weights", Tensor({k, k, c_out, c_in})),
      bias_("bias", Tensor({c_out})) {
  if (k < 1) throw std::invalid_argument("ConvLayer: k must be >= 1");
  if (pad != Pad::Same && plane != ConvPlane::XY)
    throw std::invalid_argument("ConvLayer: only the (x,y) plane supports valid padding");
}

ConvKernel ConvLayer::kernel_view() const {
  ConvKernel ker;
  ker.k = k_;
  ker.weights = weights_.value;
  ker.bias.assign(bias_.value.data(), bias_.value.data() + bias_.value.size());
  return ker;
}

void ConvLayer::init_weights(SeededRng& rng) {
  fan_in_uniform_init(weights_.value, k_ * k_ * c_in(), rng);
  bias_.value.fill(0.0);
}

int ConvLayer::forward(Tape& tape, int in, Mode, SeededRng*) {
  const Tensor& x = batched(tape.value(in), kind());
  ConvKernel ker = kernel_view();
  Tensor out;
  switch (plane_) {
    case ConvPlane::XY: out = conv2d_xy_batch(x, ker, pad_); break;
    case ConvPlane::XZ: out = conv2d_xz_batch(x, ker); break;
    case ConvPlane::YZ: out = conv2d_yz_batch(x, ker); break;
  }
  return tape.add_op(std::move(out), layer_tag(*this), [this, in](Tape& t, int out_id) {
    const Tensor& d_out = t.grad(out_id);
    const Tensor& x_in = t.value(in);
    ConvKernel ker = kernel_view();
    Tensor& d_in = t.grad(in);
    std::vector<double> d_bias(bias_.value.size(), 0.0);
    switch (plane_) {
      case ConvPlane::XY:
        conv2d_xy_backward(x_in, ker, pad_, d_out, &d_in, &weights_.grad, &d_bias);
        break;
      case ConvPlane::XZ:
        conv2d_xz_backward(x_in, ker, d_out, &d_in, &weights_.grad, &d_bias);
        break;
      case ConvPlane::YZ:
        conv2d_yz_backward(x_in, ker, d_out, &d_in, &weights_.grad, &d_bias);
        break;
    }
    for (size_t i = 0; i < d_bias.size(); ++i) bias_.grad[i] += d_bias[i];
  });
}

std::vector<int> ConvLayer::output_shape(const std::vector<int>& in) const {
  if (in.size() != 3) throw std::invalid_argument("ConvLayer: per-sample shape must be (x,y,z)");
  const int X = in[0], Y = in[1], Z = in[2];
  switch (plane_) {
    case ConvPlane::XY: {
      if (Z != c_in())
        throw std::invalid_argument(name_ + ": feature extent " + std::to_string(Z) +
                                    " does not match kernel c_in " + std::to_string(c_in()));
      if (pad_ == Pad::Same) return {X, Y, c_out()};
      if (X < k_ || Y < k_) throw std::invalid_argument(name_ + ": valid padding needs extents >= k");
      return {X - k_ + 1, Y - k_ + 1, c_out()};
    }
    case ConvPlane::XZ:
      if (Y != c_in())
        throw std::invalid_argument(name_ + ": y extent " + std::to_string(Y) +
                                    " does not match kernel c_in " + std::to_string(c_in()));
      return {X, c_out(), Z};
    case ConvPlane::YZ:
      if (X != c_in())
        throw std::invalid_argument(name_ + ": x extent " + std::to_string(X) +
                                    " does not match kernel c_in " + std::to_string(c_in()));
      return {c_out(), Y, Z};
  }
  return in;
}

void ConvLayer::back_support(const SupportGrid& out, SupportGrid& in) const {
  if (pad_ != Pad::Same) throw std::logic_error("ConvLayer::back_support supports same padding only");
  if (out.shape.size() != 3 || in.shape.size() != 3)
    throw std::invalid_argument("ConvLayer::back_support: rank-3 grids expected");
  const int Xi = in.shape[0], Yi = in.shape[1], Zi = in.shape[2];
  const int Xo = out.shape[0], Yo = out.shape[1], Zo = out.shape[2];
  const int off = k_ / 2;

  auto mark_plane = [&](int a_out_extent, int b_out_extent, auto&& collapse_on,
                        auto&& mark_window) {
    // collapse the fully connected output axis, then expand kernel windows
    std::vector<uint8_t> on(size_t(a_out_extent) * size_t(b_out_extent), 0);
    collapse_on(on);
    for (int a = 0; a < a_out_extent; ++a)
      for (int b = 0; b < b_out_extent; ++b)
        if (on[size_t(a) * size_t(b_out_extent) + size_t(b)]) mark_window(a, b);
  };

  switch (plane_) {
    case ConvPlane::XY:
      mark_plane(
          Xo, Yo,
          [&](std::vector<uint8_t>& on) {
            for (int x = 0; x < Xo; ++x)
              for (int y = 0; y < Yo; ++y)
                for (int z = 0; z < Zo; ++z)
                  if (out.on[(size_t(x) * Yo + y) * Zo + size_t(z)]) {
                    on[size_t(x) * Yo + size_t(y)] = 1;
                    break;
                  }
          },
          [&](int x, int y) {
            for (int dx = 0; dx < k_; ++dx) {
              int xs = x + dx - off;
              if (xs < 0 || xs >= Xi) continue;
              for (int dy = 0; dy < k_; ++dy) {
                int ys = y + dy - off;
                if (ys < 0 || ys >= Yi) continue;
                uint8_t* row = in.on.data() + (size_t(xs) * Yi + ys) * Zi;
                std::memset(row, 1, size_t(Zi));
              }
            }
          });
      break;
    case ConvPlane::XZ:
      mark_plane(
          Xo, Zo,
          [&](std::vector<uint8_t>& on) {
            for (int x = 0; x < Xo; ++x)
              for (int y = 0; y < Yo; ++y)
                for (int z = 0; z < Zo; ++z)
                  if (out.on[(size_t(x) * Yo + y) * Zo + size_t(z)])
                    on[size_t(x) * Zo + size_t(z)] = 1;
          },
          [&](int x, int z) {
            for (int dx = 0; dx < k_; ++dx) {
              int xs = x + dx - off;
              if (xs < 0 || xs >= Xi) continue;
              for (int dz = 0; dz < k_; ++dz) {
                int zs = z + dz - off;
                if (zs < 0 || zs >= Zi) continue;
                for (int yp = 0; yp < Yi; ++yp) in.on[(size_t(xs) * Yi + yp) * Zi + size_t(zs)] = 1;
              }
            }
          });
      break;
    case ConvPlane::YZ:
      mark_plane(
          Yo, Zo,
          [&](std::vector<uint8_t>& on) {
            for (int x = 0; x < Xo; ++x)
              for (int y = 0; y < Yo; ++y)
                for (int z = 0; z < Zo; ++z)
                  if (out.on[(size_t(x) * Yo + y) * Zo + size_t(z)])
                    on[size_t(y) * Zo + size_t(z)] = 1;
          },
          [&](int y, int z) {
            for (int dy = 0; dy < k_; ++dy) {
              int ys = y + dy - off;
              if (ys < 0 || ys >= Yi) continue;
              for (int dz = 0; dz < k_; ++dz) {
                int zs = z + dz - off;
                if (zs < 0 || zs >= Zi) continue;
                for (int xp = 0; xp < Xi; ++xp) in.on[(size_t(xp) * Yi + ys) * Zi + size_t(zs)] = 1;
              }
            }
          });
      break;
  }
}

// ---------------------------------------------------------------------------
// BatchNormLayer
// ---------------------------------------------------------------------------

BatchNormLayer::BatchNormLayer(int features, double epsilon, double momentum)
    : features_(features),
      epsilon_(epsilon),
      momentum_(momentum),
      gamma_("gamma", Tensor::full({features}, 1.0)),
      beta_("beta", Tensor({features})),
      running_mean_(Tensor({features})),
      running_var_(Tensor::full({features}, 1.0)) {
  if (features <= 0) throw std::invalid_argument("BatchNormLayer: features must be positive");
  if (epsilon <= 0.0) throw std::invalid_argument("BatchNormLayer: epsilon must be positive");
  if (momentum <= 0.0 || momentum >= 1.0)
    throw std::invalid_argument("BatchNormLayer: momentum must be in (0,1)");
}

std::vector<std::pair<std::string, Tensor*>> BatchNormLayer::buffers() {
  return {{name_ + ".running_mean", &running_mean_}, {name_ + ".running_var", &running_var_}};
}

int BatchNormLayer::forward(Tape& tape, int in, Mode mode, SeededRng*) {
  const Tensor& x = batched(tape.value(in), kind());
  const int Z = x.extent(3);
  if (Z != features_)
    throw std::invalid_argument(name_ + ": feature extent " + std::to_string(Z) +
                                " does not match " + std::to_string(features_));
  const size_t rows = x.size() / size_t(Z);
  const double* xp = x.data();

  auto istd_of = [&](const Tensor& var) {
    std::vector<double> istd(static_cast<size_t>(Z));
    for (int z = 0; z < Z; ++z) istd[size_t(z)] = 1.0 / std::sqrt(var[size_t(z)] + epsilon_);
    return istd;
  };

  if (mode == Mode::Eval) {
    std::vector<double> istd = istd_of(running_var_);
    Tensor out(x.shape());
    double* op = out.data();
    const double* g = gamma_.value.data();
    const double* b = beta_.value.data();
    const double* rm = running_mean_.data();
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r)
      for (int z = 0; z < Z; ++z)
        op[r * size_t(Z) + size_t(z)] =
            g[z] * (xp[r * size_t(Z) + size_t(z)] - rm[z]) * istd[size_t(z)] + b[z];

    auto istd_copy = std::make_shared<std::vector<double>>(std::move(istd));
    return tape.add_op(std::move(out), layer_tag(*this), [this, in, istd_copy](Tape& t, int out_id) {
      const Tensor& d_out = t.grad(out_id);
      Tensor& d_in = t.grad(in);
      const int Zc = features_;
      const size_t n_rows = d_out.size() / size_t(Zc);
      const double* gm = gamma_.value.data();
      const double* dop = d_out.data();
      double* dip = d_in.data();
      const Tensor& x_in = t.value(in);
      const double* xin = x_in.data();
      const double* rm = running_mean_.data();
      // parameter grads
      for (size_t r = 0; r < n_rows; ++r)
        for (int z = 0; z < Zc; ++z) {
          double dy = dop[r * size_t(Zc) + size_t(z)];
          double xhat = (xin[r * size_t(Zc) + size_t(z)] - rm[z]) * (*istd_copy)[size_t(z)];
          gamma_.grad[size_t(z)] += dy * xhat;
          beta_.grad[size_t(z)] += dy;
        }
#pragma omp parallel for schedule(static)
      for (size_t r = 0; r < n_rows; ++r)
        for (int z = 0; z < Zc; ++z)
          dip[r * size_t(Zc) + size_t(z)] +=
              dop[r * size_t(Zc) + size_t(z)] * gm[z] * (*istd_copy)[size_t(z)];
    });
  }

  // train mode: biased batch statistics over samples and both spatial axes
  std::vector<double> mean(size_t(Z), 0.0), var(size_t(Z), 0.0);
  for (size_t r = 0; r < rows; ++r) {
    const double* row = xp + r * size_t(Z);
    for (int z = 0; z < Z; ++z) mean[size_t(z)] += row[z];
  }
  for (int z = 0; z < Z; ++z) mean[size_t(z)] /= double(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* row = xp + r * size_t(Z);
    for (int z = 0; z < Z; ++z) {
      double d = row[z] - mean[size_t(z)];
      var[size_t(z)] += d * d;
    }
  }
  for (int z = 0; z < Z; ++z) var[size_t(z)] /= double(rows);

  for (int z = 0; z < Z; ++z) {
    running_mean_[size_t(z)] = momentum_ * running_mean_[size_t(z)] + (1.0 - momentum_) * mean[size_t(z)];
    running_var_[size_t(z)] = momentum_ * running_var_[size_t(z)] + (1.0 - momentum_) * var[size_t(z)];
  }

  std::vector<double> istd(static_cast<size_t>(Z));
  for (int z = 0; z < Z; ++z) istd[size_t(z)] = 1.0 / std::sqrt(var[size_t(z)] + epsilon_);

  auto xhat = std::make_shared<Tensor>(x.shape());
  Tensor out(x.shape());
  {
    double* xh = xhat->data();
    double* op = out.data();
    const double* g = gamma_.value.data();
    const double* b = beta_.value.data();
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r)
      for (int z = 0; z < Z; ++z) {
        size_t i = r * size_t(Z) + size_t(z);
        double h = (xp[i] - mean[size_t(z)]) * istd[size_t(z)];
        xh[i] = h;
        op[i] = g[z] * h + b[z];
      }
  }

  auto istd_copy = std::make_shared<std::vector<double>>(std::move(istd));
  return tape.add_op(std::move(out), layer_tag(*this), [this, in, xhat, istd_copy](Tape& t, int out_id) {
    const Tensor& d_out = t.grad(out_id);
    Tensor& d_in = t.grad(in);
    const int Z = features_;
    const size_t rows = d_out.size() / size_t(Z);
    const double* dop = d_out.data();
    const double* xh = xhat->data();
    const double* gm = gamma_.value.data();
    double* dip = d_in.data();

    std::vector<double> sum_dxhat(size_t(Z), 0.0), sum_dxhat_xhat(size_t(Z), 0.0);
    for (size_t r = 0; r < rows; ++r)
      for (int z = 0; z < Z; ++z) {
        size_t i = r * size_t(Z) + size_t(z);
        double dy = dop[i];
        gamma_.grad[size_t(z)] += dy * xh[i];
        beta_.grad[size_t(z)] += dy;
        double dxh = dy * gm[z];
        sum_dxhat[size_t(z)] += dxh;
        sum_dxhat_xhat[size_t(z)] += dxh * xh[i];
      }
    const double inv_m = 1.0 / double(rows);
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r)
      for (int z = 0; z < Z; ++z) {
        size_t i = r * size_t(Z) + size_t(z);
        double dxh = dop[i] * gm[z];
        dip[i] += (*istd_copy)[size_t(z)] *
                  (dxh - inv_m * (sum_dxhat[size_t(z)] + xh[i] * sum_dxhat_xhat[size_t(z)]));
      }
  });
}

// ---------------------------------------------------------------------------
// ReluLayer
// ---------------------------------------------------------------------------

int ReluLayer::forward(Tape& tape, int in, Mode, SeededRng*) {
  const Tensor& x = tape.value(in);
  Tensor out(x.shape());
  const double* xp = x.data();
  double* op = out.data();
  const size_t n = x.size();
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < n; ++i) op[i] = xp[i] > 0.0 ? xp[i] : 0.0;
  return tape.add_op(std::move(out), layer_tag(*this), [in](Tape& t, int out_id) {
    const Tensor& d_out = t.grad(out_id);
    const Tensor& x_in = t.value(in);
    Tensor& d_in = t.grad(in);
    const double* dop = d_out.data();
    const double* xp = x_in.data();
    double* dip = d_in.data();
    const size_t n = d_out.size();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i)
      if (xp[i] > 0.0) dip[i] += dop[i];
  });
}

// ---------------------------------------------------------------------------
// DropoutLayer
// ---------------------------------------------------------------------------

DropoutLayer::DropoutLayer(double rate) : rate_(rate) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("DropoutLayer: rate must be in [0,1)");
}

int DropoutLayer::forward(Tape& tape, int in, Mode mode, SeededRng* rng) {
  const Tensor& x = tape.value(in);
  if (mode == Mode::Eval || rate_ == 0.0) {
    Tensor out = x;
    return tape.add_op(std::move(out), layer_tag(*this), [in](Tape& t, int out_id) {
      const Tensor& d_out = t.grad(out_id);
      Tensor& d_in = t.grad(in);
      for (size_t i = 0; i < d_out.size(); ++i) d_in[i] += d_out[i];
    });
  }
  if (!rng) throw std::invalid_argument("DropoutLayer: train mode needs an rng");
  const double keep = 1.0 - rate_;
  const double scale = 1.0 / keep;
  auto mask = std::make_shared<std::vector<uint8_t>>(x.size());
  Tensor out(x.shape());
  for (size_t i = 0; i < x.size(); ++i) {
    bool on = rng->bernoulli(keep);
    (*mask)[i] = on;
    out[i] = on ? x[i] * scale : 0.0;
  }
  return tape.add_op(std::move(out), layer_tag(*this), [in, mask, scale](Tape& t, int out_id) {
    const Tensor& d_out = t.grad(out_id);
    Tensor& d_in = t.grad(in);
    for (size_t i = 0; i < d_out.size(); ++i)
      if ((*mask)[i]) d_in[i] += d_out[i] * scale;
  });
}

// ---------------------------------------------------------------------------
// TrilinearResizeLayer
// ---------------------------------------------------------------------------

namespace {

struct LerpAxis {
  std::vector<int> lo, hi;
  std::vector<double> w;
};

LerpAxis lerp_axis(int in_extent, int out_extent) {
  LerpAxis a;
  a.lo.resize(size_t(out_extent));
  a.hi.resize(size_t(out_extent));
  a.w.resize(size_t(out_extent));
  for (int i = 0; i < out_extent; ++i) {
    double c = out_extent > 1 ? double(i) * double(in_extent - 1) / double(out_extent - 1) : 0.0;
    int lo = std::min(int(c), in_extent - 1);
    a.lo[size_t(i)] = lo;
    a.hi[size_t(i)] = std::min(lo + 1, in_extent - 1);
    a.w[size_t(i)] = c - double(lo);
  }
  return a;
}

}  // namespace

TrilinearResizeLayer::TrilinearResizeLayer(std::array<int, 3> target) : target_(target) {
  for (int e : target)
    if (e <= 0) throw std::invalid_argument("TrilinearResizeLayer: extents must be positive");
}

std::vector<int> TrilinearResizeLayer::output_shape(const std::vector<int>& in) const {
  if (in.size() != 3) throw std::invalid_argument("TrilinearResizeLayer: rank-3 input expected");
  return {target_[0], target_[1], target_[2]};
}

int TrilinearResizeLayer::forward(Tape& tape, int in, Mode, SeededRng*) {
  const Tensor& x = batched(tape.value(in), kind());
  const int N = x.extent(0), X = x.extent(1), Y = x.extent(2), Z = x.extent(3);
  const int Xo = target_[0], Yo = target_[1], Zo = target_[2];
  Tensor out({N, Xo, Yo, Zo});
  const size_t in_stride = size_t(X) * Y * Z;
  const size_t out_stride = size_t(Xo) * Yo * Zo;
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    Tensor item({X, Y, Z},
                std::vector<double>(x.data() + size_t(n) * in_stride,
                                    x.data() + size_t(n + 1) * in_stride));
    Tensor r = trilinear_resize(item, target_);
    std::memcpy(out.data() + size_t(n) * out_stride, r.data(), out_stride * sizeof(double));
  }
  return tape.add_op(std::move(out), layer_tag(*this), [this, in](Tape& t, int out_id) {
    const Tensor& d_out = t.grad(out_id);
    Tensor& d_in = t.grad(in);
    const int N = d_in.extent(0), X = d_in.extent(1), Y = d_in.extent(2), Z = d_in.extent(3);
    const int Xo = target_[0], Yo = target_[1], Zo = target_[2];
    LerpAxis ax = lerp_axis(X, Xo), ay = lerp_axis(Y, Yo), az = lerp_axis(Z, Zo);
    const double* dop = d_out.data();
    double* dip = d_in.data();
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
      double* dsl = dip + size_t(n) * X * Y * Z;
      const double* gsl = dop + size_t(n) * Xo * Yo * Zo;
      for (int i = 0; i < Xo; ++i)
        for (int j = 0; j < Yo; ++j)
          for (int l = 0; l < Zo; ++l) {
            double g = gsl[(size_t(i) * Yo + j) * Zo + size_t(l)];
            if (g == 0.0) continue;
            for (int cx = 0; cx < 2; ++cx) {
              int xs = cx ? ax.hi[size_t(i)] : ax.lo[size_t(i)];
              double wx = cx ? ax.w[size_t(i)] : 1.0 - ax.w[size_t(i)];
              if (wx == 0.0) continue;
              for (int cy = 0; cy < 2; ++cy) {
                int ys = cy ? ay.hi[size_t(j)] : ay.lo[size_t(j)];
                double wy = cy ? ay.w[size_t(j)] : 1.0 - ay.w[size_t(j)];
                if (wy == 0.0) continue;
                for (int cz = 0; cz < 2; ++cz) {
                  int zs = cz ? az.hi[size_t(l)] : az.lo[size_t(l)];
                  double wz = cz ? az.w[size_t(l)] : 1.0 - az.w[size_t(l)];
                  if (wz == 0.0) continue;
                  dsl[(size_t(xs) * Y + ys) * Z + size_t(zs)] += g * wx * wy * wz;
                }
              }
            }
          }
    }
  });
}

void TrilinearResizeLayer::back_support(const SupportGrid& out, SupportGrid& in) const {
  if (out.shape.size() != 3 || in.shape.size() != 3)
    throw std::invalid_argument("TrilinearResizeLayer::back_support: rank-3 grids expected");
  LerpAxis ax = lerp_axis(in.shape[0], out.shape[0]);
  LerpAxis ay = lerp_axis(in.shape[1], out.shape[1]);
  LerpAxis az = lerp_axis(in.shape[2], out.shape[2]);
  const int Xo = out.shape[0], Yo = out.shape[1], Zo = out.shape[2];
  const int Yi = in.shape[1], Zi = in.shape[2];
  auto mark = [&](int xs, int ys, int zs) { in.on[(size_t(xs) * Yi + ys) * Zi + size_t(zs)] = 1; };
  for (int i = 0; i < Xo; ++i)
    for (int j = 0; j < Yo; ++j)
      for (int l = 0; l < Zo; ++l) {
        if (!out.on[(size_t(i) * Yo + j) * Zo + size_t(l)]) continue;
        int xls[2] = {ax.lo[size_t(i)], ax.hi[size_t(i)]};
        double xw[2] = {1.0 - ax.w[size_t(i)], ax.w[size_t(i)]};
        int yls[2] = {ay.lo[size_t(j)], ay.hi[size_t(j)]};
        double yw[2] = {1.0 - ay.w[size_t(j)], ay.w[size_t(j)]};
        int zls[2] = {az.lo[size_t(l)], az.hi[size_t(l)]};
        double zw[2] = {1.0 - az.w[size_t(l)], az.w[size_t(l)]};
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c)
              if (xw[a] != 0.0 && yw[b] != 0.0 && zw[c] != 0.0) mark(xls[a], yls[b], zls[c]);
      }
}

// ---------------------------------------------------------------------------
// GlobalPoolLayer
// ---------------------------------------------------------------------------

std::vector<int> GlobalPoolLayer::output_shape(const std::vector<int>& in) const {
  if (in.size() != 3) throw std::invalid_argument("GlobalPoolLayer: rank-3 input expected");
  return {in[2]};
}

int GlobalPoolLayer::forward(Tape& tape, int in, Mode, SeededRng*) {
  const Tensor& x = batched(tape.value(in), kind());
  const int N = x.extent(0), X = x.extent(1), Y = x.extent(2), Z = x.extent(3);
  Tensor out({N, Z});
  const double* xp = x.data();
  double* op = out.data();
  const double inv = 1.0 / (double(X) * double(Y));
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    double* orow = op + size_t(n) * Z;
    std::memset(orow, 0, size_t(Z) * sizeof(double));
    const double* base = xp + size_t(n) * X * Y * Z;
    for (int r = 0; r < X * Y; ++r) {
      const double* row = base + size_t(r) * Z;
      for (int z = 0; z < Z; ++z) orow[z] += row[z];
    }
    for (int z = 0; z < Z; ++z) orow[z] *= inv;
  }
  return tape.add_op(std::move(out), layer_tag(*this), [in](Tape& t, int out_id) {
    const Tensor& d_out = t.grad(out_id);
    Tensor& d_in = t.grad(in);
    const int N = d_in.extent(0), X = d_in.extent(1), Y = d_in.extent(2), Z = d_in.extent(3);
    const double inv = 1.0 / (double(X) * double(Y));
    const double* dop = d_out.data();
    double* dip = d_in.data();
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
      const double* grow = dop + size_t(n) * Z;
      double* base = dip + size_t(n) * X * Y * Z;
      for (int r = 0; r < X * Y; ++r)
        for (int z = 0; z < Z; ++z) base[size_t(r) * Z + size_t(z)] += grow[z] * inv;
    }
  });
}

void GlobalPoolLayer::back_support(const SupportGrid& out, SupportGrid& in) const {
  if (out.shape.size() != 1 || in.shape.size() != 3)
    throw std::invalid_argument("GlobalPoolLayer::back_support: shape mismatch");
  const int Z = out.shape[0];
  const int rows = in.shape[0] * in.shape[1];
  for (int z = 0; z < Z; ++z) {
    if (!out.on[size_t(z)]) continue;
    for (int r = 0; r < rows; ++r) in.on[size_t(r) * size_t(Z) + size_t(z)] = 1;
  }
}

// ---------------------------------------------------------------------------
// FlattenLayer
// ---------------------------------------------------------------------------

std::vector<int> FlattenLayer::output_shape(const std::vector<int>& in) const {
  int n = 1;
  for (int e : in) n *= e;
  return {n};
}

int FlattenLayer::forward(Tape& tape, int in, Mode, SeededRng*) {
  const Tensor& x = batched(tape.value(in), kind());
  const int N = x.extent(0);
  const int D = int(x.size() / size_t(N));
  Tensor out({N, D}, x.storage());
  return tape.add_op(std::move(out), layer_tag(*this), [in](Tape& t, int out_id) {
    const Tensor& d_out = t.grad(out_id);
    Tensor& d_in = t.grad(in);
    for (size_t i = 0; i < d_out.size(); ++i) d_in[i] += d_out[i];
  });
}

void FlattenLayer::back_support(const SupportGrid& out, SupportGrid& in) const {
  if (out.on.size() != in.on.size())
    throw std::invalid_argument("FlattenLayer::back_support: size mismatch");
  for (size_t i = 0; i < out.on.size(); ++i) in.on[i] |= out.on[i];
}

// ---------------------------------------------------------------------------
// DenseLayer
// ---------------------------------------------------------------------------

DenseLayer::DenseLayer(int out_features, int in_features)
    : weights_("weights", Tensor({out_features, in_features})),
      bias_("bias", Tensor({out_features})) {}

std::vector<int> DenseLayer::output_shape(const std::vector<int>& in) const {
  if (in.size() != 1 || in[0] != in_features())
    throw std::invalid_argument(name_ + ": input length " + shape_to_string(in) +
                                " does not match weight columns " + std::to_string(in_features()));
  return {out_features()};
}

void DenseLayer::init_weights(SeededRng& rng) {
  fan_in_uniform_init(weights_.value, in_features(), rng);
  bias_.value.fill(0.0);
}

int DenseLayer::forward(Tape& tape, int in, Mode, SeededRng*) {
  const Tensor& x = tape.value(in);
  if (x.rank() != 2 || x.extent(1) != in_features())
    throw std::invalid_argument(name_ + ": expected (n," + std::to_string(in_features()) +
                                ") input, got " + shape_to_string(x.shape()));
  const int N = x.extent(0), D = in_features(), O = out_features();
  Tensor out({N, O});
  const double* xp = x.data();
  const double* wp = weights_.value.data();
  const double* bp = bias_.value.data();
  double* op = out.data();
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* row = xp + size_t(n) * D;
    double* orow = op + size_t(n) * O;
    for (int o = 0; o < O; ++o) {
      const double* wrow = wp + size_t(o) * D;
      double acc = bp[o];
      for (int d = 0; d < D; ++d) acc += wrow[d] * row[d];
      orow[o] = acc;
    }
  }
  return tape.add_op(std::move(out), layer_tag(*this), [this, in](Tape& t, int out_id) {
    const Tensor& d_out = t.grad(out_id);
    const Tensor& x_in = t.value(in);
    Tensor& d_in = t.grad(in);
    const int N = x_in.extent(0), D = in_features(), O = out_features();
    const double* dop = d_out.data();
    const double* xp = x_in.data();
    const double* wp = weights_.value.data();
    double* dip = d_in.data();
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
      double* drow = dip + size_t(n) * D;
      const double* grow = dop + size_t(n) * O;
      for (int o = 0; o < O; ++o) {
        const double g = grow[o];
        if (g == 0.0) continue;
        const double* wrow = wp + size_t(o) * D;
        for (int d = 0; d < D; ++d) drow[d] += g * wrow[d];
      }
    }
#pragma omp parallel for schedule(static)
    for (int o = 0; o < O; ++o) {
      double* wg = weights_.grad.data() + size_t(o) * D;
      double bg = 0.0;
      for (int n = 0; n < N; ++n) {
        const double g = dop[size_t(n) * O + size_t(o)];
        bg += g;
        const double* row = xp + size_t(n) * D;
        for (int d = 0; d < D; ++d) wg[d] += g * row[d];
      }
      bias_.grad[size_t(o)] += bg;
    }
  });
}

void DenseLayer::back_support(const SupportGrid& out, SupportGrid& in) const {
  bool any = false;
  for (uint8_t v : out.on) any |= v != 0;
  if (any) std::fill(in.on.begin(), in.on.end(), uint8_t(1));
}

// ---------------------------------------------------------------------------
// softmax cross-entropy with L2
// ---------------------------------------------------------------------------

namespace {

double stable_cross_entropy(const double* logits, int n, int label) {
  double m = logits[0];
  for (int c = 1; c < n; ++c) m = std::max(m, logits[c]);
  double lse = 0.0;
  for (int c = 0; c < n; ++c) lse += std::exp(logits[c] - m);
  return std::log(lse) - (logits[label] - m);
}

}  // namespace

double softmax_cross_entropy_l2(const std::vector<double>& logits, int label,
                                const std::vector<const Tensor*>& params, double lambda) {
  if (logits.empty()) throw std::invalid_argument("softmax_cross_entropy_l2: empty logits");
  if (label < 0 || label >= int(logits.size()))
    throw std::invalid_argument("softmax_cross_entropy_l2: label " + std::to_string(label) +
                                " out of range for " + std::to_string(logits.size()) + " classes");
  if (lambda < 0.0) throw std::invalid_argument("softmax_cross_entropy_l2: lambda must be >= 0");
  double loss = stable_cross_entropy(logits.data(), int(logits.size()), label);
  double reg = 0.0;
  for (const Tensor* p : params)
    for (size_t i = 0; i < p->size(); ++i) reg += (*p)[i] * (*p)[i];
  return loss + lambda * reg;
}

int softmax_cross_entropy_loss(Tape& tape, int logits_node, const std::vector<int>& labels,
                               double lambda, const std::vector<Param*>& l2_params) {
  const Tensor& logits = tape.value(logits_node);
  if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy_loss: (n,c) logits expected");
  const int N = logits.extent(0), C = logits.extent(1);
  if (int(labels.size()) != N)
    throw std::invalid_argument("softmax_cross_entropy_loss: one label per sample required");
  if (lambda < 0.0) throw std::invalid_argument("softmax_cross_entropy_loss: lambda must be >= 0");
  for (int l : labels)
    if (l < 0 || l >= C)
      throw std::invalid_argument("softmax_cross_entropy_loss: label " + std::to_string(l) +
                                  " out of range for " + std::to_string(C) + " classes");

  double data_loss = 0.0;
  for (int n = 0; n < N; ++n)
    data_loss += stable_cross_entropy(logits.data() + size_t(n) * C, C, labels[size_t(n)]);
  data_loss /= double(N);

  double reg = 0.0;
  for (const Param* p : l2_params)
    for (size_t i = 0; i < p->value.size(); ++i) reg += p->value[i] * p->value[i];

  Tensor value({1}, {data_loss + lambda * reg});
  return tape.add_op(std::move(value), "loss",
                     [logits_node, labels, lambda, l2_params](Tape& t, int out_id) {
                       const double g = t.grad(out_id)[0];
                       const Tensor& logits = t.value(logits_node);
                       Tensor& d_logits = t.grad(logits_node);
                       const int N = logits.extent(0), C = logits.extent(1);
                       const double gn = g / double(N);
                       for (int n = 0; n < N; ++n) {
                         const double* row = logits.data() + size_t(n) * C;
                         double m = row[0];
                         for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
                         double lse = 0.0;
                         for (int c = 0; c < C; ++c) lse += std::exp(row[c] - m);
                         for (int c = 0; c < C; ++c) {
                           double p = std::exp(row[c] - m) / lse;
                           double ind = (c == labels[size_t(n)]) ? 1.0 : 0.0;
                           d_logits[size_t(n) * C + size_t(c)] += gn * (p - ind);
                         }
                       }
                       for (Param* p : l2_params)
                         for (size_t i = 0; i < p->value.size(); ++i)
                           p->grad[i] += g * 2.0 * lambda * p->value[i];
                     });
}

}  // namespace cyclenet

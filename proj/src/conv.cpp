#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "cyclenet/conv.hpp"

namespace cyclenet {

ConvKernel::ConvKernel(int k_, int c_out, int c_in, bool with_bias)
    : k(k_), weights({k_, k_, c_out, c_in}) {
  if (with_bias) bias.assign(size_t(c_out), 0.0);
}

void ConvKernel::validate() const {
  if (k < 1) throw std::invalid_argument("ConvKernel: k must be >= 1");
  if (weights.rank() != 4 || weights.extent(0) != k || weights.extent(1) != k)
    throw std::invalid_argument("ConvKernel: weights must have shape (k,k,c_out,c_in)");
  if (!bias.empty() && int(bias.size()) != c_out())
    throw std::invalid_argument("ConvKernel: bias length must equal c_out");
  for (double w : weights.storage())
    if (!std::isfinite(w)) throw std::invalid_argument("ConvKernel: weights must be finite");
}

namespace {

// ---------------------------------------------------------------------------
// Register-blocked primitives. All accumulation orders are fixed per output
// element, independent of the OpenMP schedule.
// ---------------------------------------------------------------------------

// dst[j] += sum_i s[i] * w[i*ldw + j], for j in [0, B)
template <int B>
inline void fma_block(const double* __restrict w, size_t ldw, const double* __restrict s, int n,
                      double* __restrict dst) {
  double acc[B];
  for (int j = 0; j < B; ++j) acc[j] = dst[j];
  for (int i = 0; i < n; ++i) {
    const double si = s[i];
    const double* wr = w + size_t(i) * ldw;
    for (int j = 0; j < B; ++j) acc[j] += wr[j] * si;
  }
  for (int j = 0; j < B; ++j) dst[j] = acc[j];
}

// dst[j] += sum_i s[i] * w[i*ldw + j], for j in [0, m)
inline void fma_span(const double* w, size_t ldw, const double* s, int n, double* dst, int m) {
  int j = 0;
  for (; j + 16 <= m; j += 16) fma_block<16>(w + j, ldw, s, n, dst + j);
  if (j + 8 <= m) {
    fma_block<8>(w + j, ldw, s, n, dst + j);
    j += 8;
  }
  if (j + 4 <= m) {
    fma_block<4>(w + j, ldw, s, n, dst + j);
    j += 4;
  }
  for (; j < m; ++j) {
    double a = dst[j];
    for (int i = 0; i < n; ++i) a += w[size_t(i) * ldw + j] * s[i];
    dst[j] = a;
  }
}

// 4 x 16 weight-gradient tile streamed over pixels: acc[a][b] += g[a] * s[b].
struct OuterTile {
  double acc[4][16];
  void clear() { std::memset(acc, 0, sizeof(acc)); }
  inline void add(const double* __restrict g, const double* __restrict s) {
    for (int a = 0; a < 4; ++a) {
      const double ga = g[a];
      for (int b = 0; b < 16; ++b) acc[a][b] += ga * s[b];
    }
  }
};

// 4 x 4 dot tile with 8 partial lanes per entry, contracted over a contiguous
// run shared between four A-rows and four B-rows.
struct DotTile {
  double lane[4][4][8];
  void clear() { std::memset(lane, 0, sizeof(lane)); }

  inline void add(const double* __restrict A, size_t lda, const double* __restrict B, size_t ldb,
                  int len) {
    const double* ar[4] = {A, A + lda, A + 2 * lda, A + 3 * lda};
    const double* br[4] = {B, B + ldb, B + 2 * ldb, B + 3 * ldb};
    int t = 0;
    for (; t + 8 <= len; t += 8)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          for (int l = 0; l < 8; ++l) lane[a][b][l] += ar[a][t + l] * br[b][t + l];
    for (; t < len; ++t)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) lane[a][b][0] += ar[a][t] * br[b][t];
  }

  double sum(int a, int b) const {
    double s = 0.0;
    for (int l = 0; l < 8; ++l) s += lane[a][b][l];
    return s;
  }
};

struct Dims4 {
  int N, X, Y, Z;
};

Dims4 batch_dims(const Tensor& t, const char* who) {
  if (t.rank() != 4) throw std::invalid_argument(std::string(who) + ": input must have axes (n,x,y,z)");
  return {t.extent(0), t.extent(1), t.extent(2), t.extent(3)};
}

// kernel slice transposed from (.., c_out, c_in) to (.., c_in, c_out)
Tensor transpose_kernel(const Tensor& w) {
  const int k = w.extent(0), co = w.extent(2), ci = w.extent(3);
  Tensor out({k, k, ci, co});
  const double* src = w.data();
  double* dst = out.data();
  for (int d = 0; d < k * k; ++d) {
    const double* ws = src + size_t(d) * co * ci;
    double* wd = dst + size_t(d) * co * ci;
    for (int a = 0; a < co; ++a)
      for (int b = 0; b < ci; ++b) wd[size_t(b) * co + a] = ws[size_t(a) * ci + b];
  }
  return out;
}

void check_feature_match(int have, int want, const char* who, const char* axis) {
  if (have != want)
    throw std::invalid_argument(std::string(who) + ": kernel c_in " + std::to_string(want) +
                                " does not match " + axis + " extent " + std::to_string(have));
}

}  // namespace

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

Tensor conv2d_xy_batch(const Tensor& in, const ConvKernel& kernel, Pad pad) {
  kernel.validate();
  auto [N, X, Y, Z] = batch_dims(in, "conv2d_xy");
  const int k = kernel.k, Zo = kernel.c_out(), Zi = kernel.c_in();
  check_feature_match(Z, Zi, "conv2d_xy", "feature");
  const bool same = pad == Pad::Same;
  if (!same && (X < k || Y < k))
    throw std::invalid_argument("conv2d_xy: kernel exceeds extent under valid padding");
  const int off = same ? k / 2 : 0;
  const int Xo = same ? X : X - k + 1;
  const int Yo = same ? Y : Y - k + 1;

  Tensor kt = transpose_kernel(kernel.weights);  // (k,k,zi,zo)
  Tensor out({N, Xo, Yo, Zo});
  const double* src = in.data();
  const double* ktp = kt.data();
  double* dst = out.data();
  const bool has_bias = !kernel.bias.empty();
  const double* bias = kernel.bias.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int x = 0; x < Xo; ++x) {
      double* orow = dst + ((size_t(n) * Xo + x) * Yo) * Zo;
      for (int y = 0; y < Yo; ++y) {
        double* py = orow + size_t(y) * Zo;
        if (has_bias)
          std::memcpy(py, bias, size_t(Zo) * sizeof(double));
        else
          std::memset(py, 0, size_t(Zo) * sizeof(double));
      }
      for (int dx = 0; dx < k; ++dx) {
        const int xs = x + dx - off;
        if (xs < 0 || xs >= X) continue;
        const double* irow = src + ((size_t(n) * X + xs) * Y) * Z;
        for (int dy = 0; dy < k; ++dy) {
          const int dyo = dy - off;
          const int y0 = same ? std::max(0, -dyo) : 0;
          const int y1 = same ? Y - std::max(0, dyo) : Yo;
          const double* w = ktp + (size_t(dx) * k + dy) * Zi * Zo;
          for (int y = y0; y < y1; ++y) {
            const double* s = irow + size_t(y + (same ? dyo : dy)) * Z;
            fma_span(w, size_t(Zo), s, Zi, orow + size_t(y) * Zo, Zo);
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_xz_batch(const Tensor& in, const ConvKernel& kernel) {
  kernel.validate();
  auto [N, X, Y, Z] = batch_dims(in, "conv2d_xz");
  const int k = kernel.k, Yo = kernel.c_out(), Yi = kernel.c_in();
  check_feature_match(Y, Yi, "conv2d_xz", "y");
  const int off = k / 2;

  Tensor out({N, X, Yo, Z});
  const double* src = in.data();
  const double* kw = kernel.weights.data();
  double* dst = out.data();
  const bool has_bias = !kernel.bias.empty();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int x = 0; x < X; ++x) {
      double* oplane = dst + ((size_t(n) * X + x) * Yo) * Z;
      for (int y = 0; y < Yo; ++y) {
        double* py = oplane + size_t(y) * Z;
        const double b = has_bias ? kernel.bias[size_t(y)] : 0.0;
        std::fill(py, py + Z, b);
      }
      for (int dx = 0; dx < k; ++dx) {
        const int xs = x + dx - off;
        if (xs < 0 || xs >= X) continue;
        const double* iplane = src + ((size_t(n) * X + xs) * Y) * Z;
        for (int dz = 0; dz < k; ++dz) {
          const int dzo = dz - off;
          const int z0 = std::max(0, -dzo);
          const int z1 = Z - std::max(0, dzo);
          if (z0 >= z1) continue;
          for (int y = 0; y < Yo; ++y) {
            const double* s = kw + ((size_t(dx) * k + dz) * Yo + y) * Yi;
            fma_span(iplane + z0 + dzo, size_t(Z), s, Yi, oplane + size_t(y) * Z + z0, z1 - z0);
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_yz_batch(const Tensor& in, const ConvKernel& kernel) {
  kernel.validate();
  auto [N, X, Y, Z] = batch_dims(in, "conv2d_yz");
  const int k = kernel.k, Xo = kernel.c_out(), Xi = kernel.c_in();
  check_feature_match(X, Xi, "conv2d_yz", "x");
  const int off = k / 2;

  Tensor out({N, Xo, Y, Z});
  const double* src = in.data();
  const double* kw = kernel.weights.data();
  double* dst = out.data();
  const bool has_bias = !kernel.bias.empty();
  const size_t plane = size_t(Y) * Z;

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int x = 0; x < Xo; ++x) {
      double* oplane = dst + (size_t(n) * Xo + x) * plane;
      const double b = has_bias ? kernel.bias[size_t(x)] : 0.0;
      std::fill(oplane, oplane + plane, b);
      const double* ibase = src + size_t(n) * Xi * plane;
      for (int dy = 0; dy < k; ++dy) {
        const int dyo = dy - off;
        const int y0 = std::max(0, -dyo);
        const int y1 = Y - std::max(0, dyo);
        for (int dz = 0; dz < k; ++dz) {
          const int dzo = dz - off;
          const int z0 = std::max(0, -dzo);
          const int z1 = Z - std::max(0, dzo);
          if (z0 >= z1) continue;
          const double* s = kw + ((size_t(dy) * k + dz) * Xo + x) * Xi;
          for (int y = y0; y < y1; ++y) {
            const double* w = ibase + size_t(y + dyo) * Z + z0 + dzo;
            fma_span(w, plane, s, Xi, oplane + size_t(y) * Z + z0, z1 - z0);
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace {

void dbias_accumulate(const Tensor& d_out, int axis, std::vector<double>* d_bias) {
  if (!d_bias) return;
  const int C = d_out.extent(axis);
  if (int(d_bias->size()) != C)
    throw std::invalid_argument("conv backward: d_bias length mismatch");
  const int N = d_out.extent(0);
  const double* g = d_out.data();
  const int X = d_out.extent(1), Y = d_out.extent(2), Z = d_out.extent(3);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    if (axis == 3) {
      for (size_t i = 0; i < d_out.size() / size_t(Z); ++i) acc += g[i * size_t(Z) + size_t(c)];
    } else if (axis == 2) {
      for (int n = 0; n < N; ++n)
        for (int x = 0; x < X; ++x) {
          const double* row = g + ((size_t(n) * X + x) * Y + c) * Z;
          for (int z = 0; z < Z; ++z) acc += row[z];
        }
    } else {  // axis == 1
      for (int n = 0; n < N; ++n) {
        const double* pl = g + (size_t(n) * X + c) * size_t(Y) * Z;
        for (size_t i = 0; i < size_t(Y) * Z; ++i) acc += pl[i];
      }
    }
    (*d_bias)[size_t(c)] += acc;
  }
}

// generic (edge-tile) weight-gradient accumulation for the xy plane
inline void dkxy_edge(const double* g, const double* s, int to, int ti, double* tile, int ldt) {
  for (int a = 0; a < to; ++a) {
    const double ga = g[a];
    double* row = tile + size_t(a) * ldt;
    for (int b = 0; b < ti; ++b) row[b] += ga * s[b];
  }
}

}  // namespace

void conv2d_xy_backward(const Tensor& in, const ConvKernel& kernel, Pad pad, const Tensor& d_out,
                        Tensor* d_in, Tensor* d_weights, std::vector<double>* d_bias) {
  kernel.validate();
  auto [N, X, Y, Z] = batch_dims(in, "conv2d_xy_backward");
  const int k = kernel.k, Zo = kernel.c_out(), Zi = kernel.c_in();
  check_feature_match(Z, Zi, "conv2d_xy_backward", "feature");
  const bool same = pad == Pad::Same;
  const int off = same ? k / 2 : 0;
  const int Xo = same ? X : X - k + 1;
  const int Yo = same ? Y : Y - k + 1;
  if (d_out.rank() != 4 || d_out.extent(0) != N || d_out.extent(1) != Xo ||
      d_out.extent(2) != Yo || d_out.extent(3) != Zo)
    throw std::invalid_argument("conv2d_xy_backward: d_out shape mismatch");

  const double* gp = d_out.data();
  const double* kw = kernel.weights.data();

  if (d_in) {
    if (!d_in->same_shape(in)) throw std::invalid_argument("conv2d_xy_backward: d_in shape mismatch");
    double* dip = d_in->data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int xi = 0; xi < X; ++xi) {
        double* drow = dip + ((size_t(n) * X + xi) * Y) * Z;
        for (int dx = 0; dx < k; ++dx) {
          const int xs = xi - (dx - off);
          if (xs < 0 || xs >= Xo) continue;
          const double* grow = gp + ((size_t(n) * Xo + xs) * Yo) * Zo;
          for (int dy = 0; dy < k; ++dy) {
            const int dyo = dy - off;
            // valid output rows: ys = yi - dyo in [0, Yo)
            const int yi0 = std::max(0, dyo);
            const int yi1 = std::min(Y, Yo + dyo);
            const double* w = kw + (size_t(dx) * k + dy) * Zo * Zi;
            for (int yi = yi0; yi < yi1; ++yi) {
              const double* s = grow + size_t(yi - dyo) * Zo;
              fma_span(w, size_t(Zi), s, Zo, drow + size_t(yi) * Z, Zi);
            }
          }
        }
      }
    }
  }

  if (d_weights) {
    if (!d_weights->same_shape(kernel.weights))
      throw std::invalid_argument("conv2d_xy_backward: d_weights shape mismatch");
    double* dwp = d_weights->data();
    const double* ip = in.data();
    const int zo_tiles = (Zo + 3) / 4;
#pragma omp parallel for collapse(3) schedule(static)
    for (int dx = 0; dx < k; ++dx) {
      for (int dy = 0; dy < k; ++dy) {
        for (int zt = 0; zt < zo_tiles; ++zt) {
          const int dxo = dx - off, dyo = dy - off;
          const int x0 = same ? std::max(0, -dxo) : 0;
          const int x1 = same ? X - std::max(0, dxo) : Xo;
          const int y0 = same ? std::max(0, -dyo) : 0;
          const int y1 = same ? Y - std::max(0, dyo) : Yo;
          const int zo0 = zt * 4;
          const int to = std::min(4, Zo - zo0);
          double* wslice = dwp + ((size_t(dx) * k + dy) * Zo + zo0) * Zi;
          for (int zi0 = 0; zi0 < Zi; zi0 += 16) {
            const int ti = std::min(16, Zi - zi0);
            OuterTile tile;
            tile.clear();
            const bool full = (to == 4 && ti == 16);
            for (int n = 0; n < N; ++n) {
              for (int x = x0; x < x1; ++x) {
                const double* grow = gp + ((size_t(n) * Xo + x) * Yo) * Zo + size_t(zo0);
                const double* irow =
                    ip + ((size_t(n) * X + x + (same ? dxo : dx)) * Y) * Z + size_t(zi0);
                if (full) {
                  for (int y = y0; y < y1; ++y)
                    tile.add(grow + size_t(y) * Zo,
                             irow + size_t(y + (same ? dyo : dy)) * Z);
                } else {
                  for (int y = y0; y < y1; ++y)
                    dkxy_edge(grow + size_t(y) * Zo, irow + size_t(y + (same ? dyo : dy)) * Z,
                              to, ti, &tile.acc[0][0], 16);
                }
              }
            }
            for (int a = 0; a < to; ++a)
              for (int b = 0; b < ti; ++b) wslice[size_t(a) * Zi + zi0 + b] += tile.acc[a][b];
          }
        }
      }
    }
  }

  dbias_accumulate(d_out, 3, d_bias);
}

void conv2d_xz_backward(const Tensor& in, const ConvKernel& kernel, const Tensor& d_out,
                        Tensor* d_in, Tensor* d_weights, std::vector<double>* d_bias) {
  kernel.validate();
  auto [N, X, Y, Z] = batch_dims(in, "conv2d_xz_backward");
  const int k = kernel.k, Yo = kernel.c_out(), Yi = kernel.c_in();
  check_feature_match(Y, Yi, "conv2d_xz_backward", "y");
  const int off = k / 2;
  if (d_out.rank() != 4 || d_out.extent(0) != N || d_out.extent(1) != X ||
      d_out.extent(2) != Yo || d_out.extent(3) != Z)
    throw std::invalid_argument("conv2d_xz_backward: d_out shape mismatch");

  const double* gp = d_out.data();
  const double* ip = in.data();

  if (d_in) {
    if (!d_in->same_shape(in)) throw std::invalid_argument("conv2d_xz_backward: d_in shape mismatch");
    Tensor kt = transpose_kernel(kernel.weights);  // (k,k,yi,yo)
    const double* ktp = kt.data();
    double* dip = d_in->data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int xi = 0; xi < X; ++xi) {
        double* dplane = dip + ((size_t(n) * X + xi) * Y) * Z;
        for (int dx = 0; dx < k; ++dx) {
          const int xs = xi - (dx - off);
          if (xs < 0 || xs >= X) continue;
          const double* gplane = gp + ((size_t(n) * X + xs) * Yo) * Z;
          for (int dz = 0; dz < k; ++dz) {
            const int dzo = dz - off;
            const int z0 = std::max(0, dzo);
            const int z1 = Z + std::min(0, dzo);
            if (z0 >= z1) continue;
            for (int yi = 0; yi < Yi; ++yi) {
              const double* s = ktp + ((size_t(dx) * k + dz) * Yi + yi) * Yo;
              fma_span(gplane + z0 - dzo, size_t(Z), s, Yo, dplane + size_t(yi) * Z + z0, z1 - z0);
            }
          }
        }
      }
    }
  }

  if (d_weights) {
    if (!d_weights->same_shape(kernel.weights))
      throw std::invalid_argument("conv2d_xz_backward: d_weights shape mismatch");
    double* dwp = d_weights->data();
    const int y_tiles = (Yo + 3) / 4;
#pragma omp parallel for collapse(3) schedule(static)
    for (int dx = 0; dx < k; ++dx) {
      for (int dz = 0; dz < k; ++dz) {
        for (int yt = 0; yt < y_tiles; ++yt) {
          const int dxo = dx - off, dzo = dz - off;
          const int x0 = std::max(0, -dxo);
          const int x1 = X - std::max(0, dxo);
          const int z0 = std::max(0, -dzo);
          const int z1 = Z - std::max(0, dzo);
          const int y0 = yt * 4;
          const int ta = std::min(4, Yo - y0);
          if (z0 >= z1) continue;
          double* wslice = dwp + ((size_t(dx) * k + dz) * Yo + y0) * Yi;
          for (int yp0 = 0; yp0 < Yi; yp0 += 4) {
            const int tb = std::min(4, Yi - yp0);
            DotTile tile;
            tile.clear();
            if (ta == 4 && tb == 4) {
              for (int n = 0; n < N; ++n)
                for (int x = x0; x < x1; ++x) {
                  const double* A = gp + ((size_t(n) * X + x) * Yo + y0) * Z + z0;
                  const double* B = ip + ((size_t(n) * X + x + dxo) * Y + yp0) * Z + z0 + dzo;
                  tile.add(A, size_t(Z), B, size_t(Z), z1 - z0);
                }
              for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) wslice[size_t(a) * Yi + yp0 + b] += tile.sum(a, b);
            } else {
              for (int a = 0; a < ta; ++a)
                for (int b = 0; b < tb; ++b) {
                  double acc = 0.0;
                  for (int n = 0; n < N; ++n)
                    for (int x = x0; x < x1; ++x) {
                      const double* A = gp + ((size_t(n) * X + x) * Yo + y0 + a) * Z + z0;
                      const double* B =
                          ip + ((size_t(n) * X + x + dxo) * Y + yp0 + b) * Z + z0 + dzo;
                      for (int t = 0; t < z1 - z0; ++t) acc += A[t] * B[t];
                    }
                  wslice[size_t(a) * Yi + yp0 + b] += acc;
                }
            }
          }
        }
      }
    }
  }

  dbias_accumulate(d_out, 2, d_bias);
}

void conv2d_yz_backward(const Tensor& in, const ConvKernel& kernel, const Tensor& d_out,
                        Tensor* d_in, Tensor* d_weights, std::vector<double>* d_bias) {
  kernel.validate();
  auto [N, X, Y, Z] = batch_dims(in, "conv2d_yz_backward");
  const int k = kernel.k, Xo = kernel.c_out(), Xi = kernel.c_in();
  check_feature_match(X, Xi, "conv2d_yz_backward", "x");
  const int off = k / 2;
  if (d_out.rank() != 4 || d_out.extent(0) != N || d_out.extent(1) != Xo ||
      d_out.extent(2) != Y || d_out.extent(3) != Z)
    throw std::invalid_argument("conv2d_yz_backward: d_out shape mismatch");

  const double* gp = d_out.data();
  const double* ip = in.data();
  const size_t plane = size_t(Y) * Z;

  if (d_in) {
    if (!d_in->same_shape(in)) throw std::invalid_argument("conv2d_yz_backward: d_in shape mismatch");
    Tensor kt = transpose_kernel(kernel.weights);  // (k,k,xi,xo)
    const double* ktp = kt.data();
    double* dip = d_in->data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int xi = 0; xi < Xi; ++xi) {
        double* dplane = dip + (size_t(n) * Xi + xi) * plane;
        const double* gbase = gp + size_t(n) * Xo * plane;
        for (int dy = 0; dy < k; ++dy) {
          const int dyo = dy - off;
          const int y0 = std::max(0, dyo);
          const int y1 = Y + std::min(0, dyo);
          for (int dz = 0; dz < k; ++dz) {
            const int dzo = dz - off;
            const int z0 = std::max(0, dzo);
            const int z1 = Z + std::min(0, dzo);
            if (z0 >= z1) continue;
            const double* s = ktp + ((size_t(dy) * k + dz) * Xi + xi) * Xo;
            for (int y = y0; y < y1; ++y) {
              const double* w = gbase + size_t(y - dyo) * Z + (z0 - dzo);
              fma_span(w, plane, s, Xo, dplane + size_t(y) * Z + z0, z1 - z0);
            }
          }
        }
      }
    }
  }

  if (d_weights) {
    if (!d_weights->same_shape(kernel.weights))
      throw std::invalid_argument("conv2d_yz_backward: d_weights shape mismatch");
    double* dwp = d_weights->data();
    const int x_tiles = (Xo + 3) / 4;
#pragma omp parallel for collapse(3) schedule(static)
    for (int dy = 0; dy < k; ++dy) {
      for (int dz = 0; dz < k; ++dz) {
        for (int xt = 0; xt < x_tiles; ++xt) {
          const int dyo = dy - off, dzo = dz - off;
          const int y0 = std::max(0, -dyo);
          const int y1 = Y - std::max(0, dyo);
          const int z0 = std::max(0, -dzo);
          const int z1 = Z - std::max(0, dzo);
          const int xo0 = xt * 4;
          const int ta = std::min(4, Xo - xo0);
          if (z0 >= z1) continue;
          double* wslice = dwp + ((size_t(dy) * k + dz) * Xo + xo0) * Xi;
          for (int xp0 = 0; xp0 < Xi; xp0 += 4) {
            const int tb = std::min(4, Xi - xp0);
            DotTile tile;
            tile.clear();
            if (ta == 4 && tb == 4) {
              for (int n = 0; n < N; ++n)
                for (int y = y0; y < y1; ++y) {
                  const double* A = gp + (size_t(n) * Xo + xo0) * plane + size_t(y) * Z + z0;
                  const double* B =
                      ip + (size_t(n) * Xi + xp0) * plane + size_t(y + dyo) * Z + z0 + dzo;
                  tile.add(A, plane, B, plane, z1 - z0);
                }
              for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) wslice[size_t(a) * Xi + xp0 + b] += tile.sum(a, b);
            } else {
              for (int a = 0; a < ta; ++a)
                for (int b = 0; b < tb; ++b) {
                  double acc = 0.0;
                  for (int n = 0; n < N; ++n)
                    for (int y = y0; y < y1; ++y) {
                      const double* A =
                          gp + (size_t(n) * Xo + xo0 + a) * plane + size_t(y) * Z + z0;
                      const double* B =
                          ip + (size_t(n) * Xi + xp0 + b) * plane + size_t(y + dyo) * Z + z0 + dzo;
                      for (int t = 0; t < z1 - z0; ++t) acc += A[t] * B[t];
                    }
                  wslice[size_t(a) * Xi + xp0 + b] += acc;
                }
            }
          }
        }
      }
    }
  }

  dbias_accumulate(d_out, 1, d_bias);
}

// ---------------------------------------------------------------------------
// single-sample wrappers
// ---------------------------------------------------------------------------

namespace {

Tensor with_batch_axis(const Tensor& t) {
  if (t.rank() != 3) throw std::invalid_argument("conv2d: input must have axes (x,y,z)");
  return Tensor({1, t.extent(0), t.extent(1), t.extent(2)}, t.storage());
}

Tensor drop_batch_axis(Tensor&& t) {
  return Tensor({t.extent(1), t.extent(2), t.extent(3)}, std::move(t.storage()));
}

}  // namespace

Tensor conv2d_xy(const Tensor& in, const ConvKernel& kernel, Pad pad) {
  return drop_batch_axis(conv2d_xy_batch(with_batch_axis(in), kernel, pad));
}

Tensor conv2d_xz(const Tensor& in, const ConvKernel& kernel) {
  return drop_batch_axis(conv2d_xz_batch(with_batch_axis(in), kernel));
}

Tensor conv2d_yz(const Tensor& in, const ConvKernel& kernel) {
  return drop_batch_axis(conv2d_yz_batch(with_batch_axis(in), kernel));
}

}  // namespace cyclenet

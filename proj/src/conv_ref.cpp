#include <stdexcept>

#include "cyclenet/conv.hpp"

namespace cyclenet::ref {

Tensor conv2d_xy(const Tensor& in, const ConvKernel& kernel, Pad pad) {
  kernel.validate();
  if (in.rank() != 3) throw std::invalid_argument("conv2d_xy: input must have axes (x,y,z)");
  const int X = in.extent(0), Y = in.extent(1), Z = in.extent(2);
  const int k = kernel.k, Zo = kernel.c_out(), Zi = kernel.c_in();
  if (Zi != Z)
    throw std::invalid_argument("conv2d_xy: kernel c_in " + std::to_string(Zi) +
                                " does not match feature extent " + std::to_string(Z));
  const bool same = pad == Pad::Same;
  if (!same && (X < k || Y < k))
    throw std::invalid_argument("conv2d_xy: kernel exceeds extent under valid padding");
  const int off = same ? k / 2 : 0;
  const int Xo = same ? X : X - k + 1;
  const int Yo = same ? Y : Y - k + 1;

  Tensor out({Xo, Yo, Zo});
  for (int x = 0; x < Xo; ++x)
    for (int y = 0; y < Yo; ++y)
      for (int zo = 0; zo < Zo; ++zo) {
        double acc = kernel.bias.empty() ? 0.0 : kernel.bias[size_t(zo)];
        for (int dx = 0; dx < k; ++dx) {
          int xs = x + dx - off;
          if (xs < 0 || xs >= X) continue;
          for (int dy = 0; dy < k; ++dy) {
            int ys = y + dy - off;
            if (ys < 0 || ys >= Y) continue;
            for (int zi = 0; zi < Z; ++zi)
              acc += kernel.weights.at({dx, dy, zo, zi}) * in.at({xs, ys, zi});
          }
        }
        out.at({x, y, zo}) = acc;
      }
  return out;
}

Tensor conv2d_xz(const Tensor& in, const ConvKernel& kernel) {
  kernel.validate();
  if (in.rank() != 3) throw std::invalid_argument("conv2d_xz: input must have axes (x,y,z)");
  const int X = in.extent(0), Y = in.extent(1), Z = in.extent(2);
  const int k = kernel.k, Yo = kernel.c_out(), Yi = kernel.c_in();
  if (Yi != Y)
    throw std::invalid_argument("conv2d_xz: kernel c_in " + std::to_string(Yi) +
                                " does not match y extent " + std::to_string(Y));
  const int off = k / 2;

  Tensor out({X, Yo, Z});
  for (int x = 0; x < X; ++x)
    for (int y = 0; y < Yo; ++y)
      for (int z = 0; z < Z; ++z) {
        double acc = kernel.bias.empty() ? 0.0 : kernel.bias[size_t(y)];
        for (int dx = 0; dx < k; ++dx) {
          int xs = x + dx - off;
          if (xs < 0 || xs >= X) continue;
          for (int dz = 0; dz < k; ++dz) {
            int zs = z + dz - off;
            if (zs < 0 || zs >= Z) continue;
            for (int yp = 0; yp < Y; ++yp)
              acc += kernel.weights.at({dx, dz, y, yp}) * in.at({xs, yp, zs});
          }
        }
        out.at({x, y, z}) = acc;
      }
  return out;
}

Tensor conv2d_yz(const Tensor& in, const ConvKernel& kernel) {
  kernel.validate();
  if (in.rank() != 3) throw std::invalid_argument("conv2d_yz: input must have axes (x,y,z)");
  const int X = in.extent(0), Y = in.extent(1), Z = in.extent(2);
  const int k = kernel.k, Xo = kernel.c_out(), Xi = kernel.c_in();
  if (Xi != X)
    throw std::invalid_argument("conv2d_yz: kernel c_in " + std::to_string(Xi) +
                                " does not match x extent " + std::to_string(X));
  const int off = k / 2;

  Tensor out({Xo, Y, Z});
  for (int x = 0; x < Xo; ++x)
    for (int y = 0; y < Y; ++y)
      for (int z = 0; z < Z; ++z) {
        double acc = kernel.bias.empty() ? 0.0 : kernel.bias[size_t(x)];
        for (int dy = 0; dy < k; ++dy) {
          int ys = y + dy - off;
          if (ys < 0 || ys >= Y) continue;
          for (int dz = 0; dz < k; ++dz) {
            int zs = z + dz - off;
            if (zs < 0 || zs >= Z) continue;
            for (int xp = 0; xp < X; ++xp)
              acc += kernel.weights.at({dy, dz, x, xp}) * in.at({xp, ys, zs});
          }
        }
        out.at({x, y, z}) = acc;
      }
  return out;
}

}  // namespace cyclenet::ref

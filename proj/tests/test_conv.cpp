#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cyclenet/conv.hpp"
#include "cyclenet/rng.hpp"
#include "cyclenet/tensor.hpp"
#include "testing.hpp"

using namespace cyclenet;

namespace {

// oracle: conv in the (x,z) plane expressed as permute + (x,y) conv + inverse
Tensor xz_via_permutation(const Tensor& in, const ConvKernel& ker) {
  AxisPermutation p{0, 2, 1};
  return permute_axes(conv2d_xy(permute_axes(in, p), ker), inverse(p));
}

// oracle: conv in the (y,z) plane via axes (y,z,x), kernel used as stored
Tensor yz_via_permutation(const Tensor& in, const ConvKernel& ker) {
  AxisPermutation p{1, 2, 0};
  return permute_axes(conv2d_xy(permute_axes(in, p), ker), inverse(p));
}

// the same oracle through axes (z,y,x); the kernel's two local axes swap
Tensor yz_via_reversal(const Tensor& in, const ConvKernel& ker) {
  ConvKernel swapped = ker;
  swapped.weights = permute_axes(ker.weights, AxisPermutation{1, 0, 2, 3});
  AxisPermutation p{2, 1, 0};
  return permute_axes(conv2d_xy(permute_axes(in, p), swapped), inverse(p));
}

ConvKernel identity_kernel_k1(int c) {
  ConvKernel ker(1, c, c, false);
  for (int i = 0; i < c; ++i) ker.weights.at({0, 0, i, i}) = 1.0;
  return ker;
}

}  // namespace

TEST_CASE("conv2d_xy identity kernel") {
  SeededRng rng(1);
  Tensor in = testing::random_tensor({4, 5, 3}, rng);
  Tensor out = conv2d_xy(in, identity_kernel_k1(3));
  CHECK(testing::max_abs_diff(in, out) == 0.0);
}

TEST_CASE("conv2d_xy all-ones 3x3 same padding") {
  Tensor in = Tensor::full({3, 3, 1}, 1.0);
  ConvKernel ker(3, 1, 1, false);
  ker.weights.fill(1.0);
  Tensor out = conv2d_xy(in, ker);
  CHECK(out.at({1, 1, 0}) == 9.0);
  CHECK(out.at({0, 1, 0}) == 6.0);
  CHECK(out.at({1, 0, 0}) == 6.0);
  CHECK(out.at({2, 1, 0}) == 6.0);
  CHECK(out.at({0, 0, 0}) == 4.0);
  CHECK(out.at({2, 2, 0}) == 4.0);
}

TEST_CASE("conv2d_xy delta kernel shifts the image") {
  SeededRng rng(2);
  Tensor in = testing::random_tensor({5, 4, 1}, rng);
  ConvKernel ker(3, 1, 1, false);
  // displacement (+1, 0): offset index dx = 1 + k/2
  ker.weights.at({2, 1, 0, 0}) = 1.0;
  Tensor out = conv2d_xy(in, ker);
  for (int x = 0; x < 5; ++x)
    for (int y = 0; y < 4; ++y) {
      double want = (x + 1 < 5) ? in.at({x + 1, y, 0}) : 0.0;
      CHECK(out.at({x, y, 0}) == want);
    }
}

TEST_CASE("conv2d_xy valid padding") {
  SeededRng rng(3);
  Tensor in = testing::random_tensor({5, 6, 2}, rng);
  ConvKernel ker = testing::random_kernel(3, 4, 2, rng);
  Tensor out = conv2d_xy(in, ker, Pad::Valid);
  CHECK(out.shape() == std::vector<int>{3, 4, 4});
  Tensor want = ref::conv2d_xy(in, ker, Pad::Valid);
  CHECK(testing::max_abs_diff(out, want) <= 1e-12);

  CHECK_THROWS_AS(conv2d_xy(Tensor({2, 2, 2}), ConvKernel(3, 2, 2), Pad::Valid),
                  std::invalid_argument);
}

TEST_CASE("conv2d_xy channel mismatch") {
  CHECK_THROWS_AS(conv2d_xy(Tensor({3, 3, 2}), ConvKernel(3, 4, 3)), std::invalid_argument);
  CHECK_THROWS_AS(conv2d_xz(Tensor({3, 5, 2}), ConvKernel(1, 4, 4)), std::invalid_argument);
  CHECK_THROWS_AS(conv2d_yz(Tensor({3, 5, 2}), ConvKernel(1, 4, 4)), std::invalid_argument);
}

TEST_CASE("conv2d_xz identity over the fully connected axis") {
  SeededRng rng(4);
  Tensor in = testing::random_tensor({3, 4, 5}, rng);
  Tensor out = conv2d_xz(in, identity_kernel_k1(4));
  CHECK(testing::max_abs_diff(in, out) == 0.0);
}

TEST_CASE("conv2d_xz k=1 equals per-fiber matrix product") {
  SeededRng rng(5);
  const int X = 3, Y = 4, Z = 2, Yo = 5;
  Tensor in = testing::random_tensor({X, Y, Z}, rng);
  ConvKernel ker = testing::random_kernel(1, Yo, Y, rng, false);
  Tensor out = conv2d_xz(in, ker);
  REQUIRE(out.shape() == std::vector<int>{X, Yo, Z});
  for (int x = 0; x < X; ++x)
    for (int y = 0; y < Yo; ++y)
      for (int z = 0; z < Z; ++z) {
        double want = 0.0;
        for (int yp = 0; yp < Y; ++yp) want += ker.weights.at({0, 0, y, yp}) * in.at({x, yp, z});
        CHECK(out.at({x, y, z}) == doctest::Approx(want).epsilon(1e-12));
      }
}

TEST_CASE("conv2d_yz k=1 equals per-fiber matrix product") {
  SeededRng rng(6);
  const int X = 2, Y = 2, Z = 2, Xo = 3;
  Tensor in = testing::random_tensor({X, Y, Z}, rng);
  ConvKernel ker = testing::random_kernel(1, Xo, X, rng, false);
  Tensor out = conv2d_yz(in, ker);
  for (int x = 0; x < Xo; ++x)
    for (int y = 0; y < Y; ++y)
      for (int z = 0; z < Z; ++z) {
        double want = 0.0;
        for (int xp = 0; xp < X; ++xp) want += ker.weights.at({0, 0, x, xp}) * in.at({xp, y, z});
        CHECK(out.at({x, y, z}) == doctest::Approx(want).epsilon(1e-12));
      }
}

TEST_CASE("orthogonal convs equal their permutation compositions") {
  SeededRng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    int X = 1 + int(rng.next_below(6));
    int Y = 1 + int(rng.next_below(6));
    int Z = 1 + int(rng.next_below(6));
    int k = 1 + int(rng.next_below(4));
    Tensor in = testing::random_tensor({X, Y, Z}, rng);

    int Yo = 1 + int(rng.next_below(6));
    ConvKernel kxz = testing::random_kernel(k, Yo, Y, rng);
    CHECK(testing::max_abs_diff(conv2d_xz(in, kxz), xz_via_permutation(in, kxz)) <= 1e-12);

    int Xo = 1 + int(rng.next_below(6));
    ConvKernel kyz = testing::random_kernel(k, Xo, X, rng);
    Tensor direct = conv2d_yz(in, kyz);
    CHECK(testing::max_abs_diff(direct, yz_via_permutation(in, kyz)) <= 1e-12);
    CHECK(testing::max_abs_diff(direct, yz_via_reversal(in, kyz)) <= 1e-12);
  }
}

TEST_CASE("parallel kernels match the serial reference") {
  SeededRng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    int X = 1 + int(rng.next_below(7));
    int Y = 1 + int(rng.next_below(7));
    int Z = 1 + int(rng.next_below(7));
    int k = 1 + int(rng.next_below(5));
    Tensor in = testing::random_tensor({X, Y, Z}, rng);

    int Co = 1 + int(rng.next_below(7));
    ConvKernel kxy = testing::random_kernel(k, Co, Z, rng);
    CHECK(testing::max_abs_diff(conv2d_xy(in, kxy), ref::conv2d_xy(in, kxy)) <= 1e-12);
    if (X >= k && Y >= k)
      CHECK(testing::max_abs_diff(conv2d_xy(in, kxy, Pad::Valid),
                                  ref::conv2d_xy(in, kxy, Pad::Valid)) <= 1e-12);

    ConvKernel kxz = testing::random_kernel(k, Co, Y, rng);
    CHECK(testing::max_abs_diff(conv2d_xz(in, kxz), ref::conv2d_xz(in, kxz)) <= 1e-12);

    ConvKernel kyz = testing::random_kernel(k, Co, X, rng);
    CHECK(testing::max_abs_diff(conv2d_yz(in, kyz), ref::conv2d_yz(in, kyz)) <= 1e-12);
  }
}

TEST_CASE("convolutions are linear in input and kernel") {
  SeededRng rng(9);
  const int X = 4, Y = 3, Z = 5, k = 3;
  Tensor a = testing::random_tensor({X, Y, Z}, rng);
  Tensor b = testing::random_tensor({X, Y, Z}, rng);
  double alpha = 0.37, beta = -1.21;

  Tensor mix({X, Y, Z});
  for (size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * a[i] + beta * b[i];

  auto check_linear = [&](auto&& conv, const ConvKernel& ker) {
    Tensor ya = conv(a, ker), yb = conv(b, ker), ym = conv(mix, ker);
    Tensor want(ya.shape());
    for (size_t i = 0; i < want.size(); ++i) want[i] = alpha * ya[i] + beta * yb[i];
    CHECK(testing::max_abs_diff(ym, want) <= 1e-10);
  };
  ConvKernel kxy = testing::random_kernel(k, 4, Z, rng, false);
  ConvKernel kxz = testing::random_kernel(k, 4, Y, rng, false);
  ConvKernel kyz = testing::random_kernel(k, 4, X, rng, false);
  check_linear([](const Tensor& t, const ConvKernel& c) { return conv2d_xy(t, c); }, kxy);
  check_linear([](const Tensor& t, const ConvKernel& c) { return conv2d_xz(t, c); }, kxz);
  check_linear([](const Tensor& t, const ConvKernel& c) { return conv2d_yz(t, c); }, kyz);

  // kernel-side superposition for the (x,y) plane
  ConvKernel k1 = testing::random_kernel(k, 4, Z, rng, false);
  ConvKernel k2 = testing::random_kernel(k, 4, Z, rng, false);
  ConvKernel kmix(k, 4, Z, false);
  for (size_t i = 0; i < kmix.weights.size(); ++i)
    kmix.weights[i] = alpha * k1.weights[i] + beta * k2.weights[i];
  Tensor y1 = conv2d_xy(a, k1), y2 = conv2d_xy(a, k2), ym = conv2d_xy(a, kmix);
  for (size_t i = 0; i < ym.size(); ++i)
    CHECK(ym[i] == doctest::Approx(alpha * y1[i] + beta * y2[i]).epsilon(1e-10));
}

namespace {

// central finite differences through the batched forward pass
template <typename Forward>
void fd_check_backward(Forward&& fwd, const Tensor& in, ConvKernel ker, const Tensor& d_out,
                       Tensor& d_in, Tensor& d_w, std::vector<double>& d_b,
                       cyclenet::SeededRng& rng) {
  const double h = 1e-6;
  auto loss = [&](const Tensor& input, const ConvKernel& kk) {
    Tensor out = fwd(input, kk);
    double s = 0.0;
    for (size_t i = 0; i < out.size(); ++i) s += out[i] * d_out[i];
    return s;
  };
  for (int probe = 0; probe < 8; ++probe) {
    size_t i = rng.next_below(in.size());
    Tensor ip = in, im = in;
    ip[i] += h;
    im[i] -= h;
    double fd = (loss(ip, ker) - loss(im, ker)) / (2 * h);
    CHECK(d_in[i] == doctest::Approx(fd).epsilon(1e-5));
  }
  for (int probe = 0; probe < 8; ++probe) {
    size_t i = rng.next_below(ker.weights.size());
    ConvKernel kp = ker, km = ker;
    kp.weights[i] += h;
    km.weights[i] -= h;
    double fd = (loss(in, kp) - loss(in, km)) / (2 * h);
    CHECK(d_w[i] == doctest::Approx(fd).epsilon(1e-5));
  }
  for (size_t i = 0; i < d_b.size(); ++i) {
    ConvKernel kp = ker, km = ker;
    kp.bias[i] += h;
    km.bias[i] -= h;
    double fd = (loss(in, kp) - loss(in, km)) / (2 * h);
    CHECK(d_b[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

}  // namespace

TEST_CASE("conv backward kernels agree with finite differences") {
  SeededRng rng(10);
  const int N = 2, X = 4, Y = 3, Z = 3, k = 3;
  Tensor in = testing::random_tensor({N, X, Y, Z}, rng);

  SUBCASE("xy same") {
    ConvKernel ker = testing::random_kernel(k, 4, Z, rng);
    Tensor out = conv2d_xy_batch(in, ker, Pad::Same);
    Tensor d_out = testing::random_tensor(out.shape(), rng);
    Tensor d_in(in.shape()), d_w(ker.weights.shape());
    std::vector<double> d_b(ker.bias.size(), 0.0);
    conv2d_xy_backward(in, ker, Pad::Same, d_out, &d_in, &d_w, &d_b);
    fd_check_backward(
        [](const Tensor& t, const ConvKernel& c) { return conv2d_xy_batch(t, c, Pad::Same); }, in,
        ker, d_out, d_in, d_w, d_b, rng);
  }
  SUBCASE("xy valid") {
    ConvKernel ker = testing::random_kernel(3, 2, Z, rng);
    Tensor out = conv2d_xy_batch(in, ker, Pad::Valid);
    Tensor d_out = testing::random_tensor(out.shape(), rng);
    Tensor d_in(in.shape()), d_w(ker.weights.shape());
    std::vector<double> d_b(ker.bias.size(), 0.0);
    conv2d_xy_backward(in, ker, Pad::Valid, d_out, &d_in, &d_w, &d_b);
    fd_check_backward(
        [](const Tensor& t, const ConvKernel& c) { return conv2d_xy_batch(t, c, Pad::Valid); }, in,
        ker, d_out, d_in, d_w, d_b, rng);
  }
  SUBCASE("xz") {
    ConvKernel ker = testing::random_kernel(k, 5, Y, rng);
    Tensor out = conv2d_xz_batch(in, ker);
    Tensor d_out = testing::random_tensor(out.shape(), rng);
    Tensor d_in(in.shape()), d_w(ker.weights.shape());
    std::vector<double> d_b(ker.bias.size(), 0.0);
    conv2d_xz_backward(in, ker, d_out, &d_in, &d_w, &d_b);
    fd_check_backward([](const Tensor& t, const ConvKernel& c) { return conv2d_xz_batch(t, c); },
                      in, ker, d_out, d_in, d_w, d_b, rng);
  }
  SUBCASE("yz") {
    ConvKernel ker = testing::random_kernel(k, 5, X, rng);
    Tensor out = conv2d_yz_batch(in, ker);
    Tensor d_out = testing::random_tensor(out.shape(), rng);
    Tensor d_in(in.shape()), d_w(ker.weights.shape());
    std::vector<double> d_b(ker.bias.size(), 0.0);
    conv2d_yz_backward(in, ker, d_out, &d_in, &d_w, &d_b);
    fd_check_backward([](const Tensor& t, const ConvKernel& c) { return conv2d_yz_batch(t, c); },
                      in, ker, d_out, d_in, d_w, d_b, rng);
  }
}

TEST_CASE("batched conv matches per-sample conv") {
  SeededRng rng(18);
  const int N = 3, X = 4, Y = 5, Z = 2;
  Tensor batch = testing::random_tensor({N, X, Y, Z}, rng);
  ConvKernel ker = testing::random_kernel(3, 4, Z, rng);
  Tensor out = conv2d_xy_batch(batch, ker, Pad::Same);
  for (int n = 0; n < N; ++n) {
    Tensor item({X, Y, Z});
    for (int i = 0; i < X * Y * Z; ++i) item[size_t(i)] = batch[size_t(n) * X * Y * Z + size_t(i)];
    Tensor want = conv2d_xy(item, ker);
    for (int i = 0; i < X * Y * 4; ++i)
      CHECK(out[size_t(n) * X * Y * 4 + size_t(i)] == want[size_t(i)]);
  }
}

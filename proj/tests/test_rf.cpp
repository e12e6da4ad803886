#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "cyclenet/rf.hpp"
#include "testing.hpp"

using namespace cyclenet;

namespace {

// ---------------------------------------------------------------------------
// independent brute-force oracle: propagate explicit coordinate sets through
// the layer plan, one element at a time
// ---------------------------------------------------------------------------

using Coord = std::array<int, 3>;
using CoordSet = std::set<Coord>;

CoordSet propagate_back(const LayerPlan& p, const CoordSet& out) {
  CoordSet in;
  auto in_extent = [&](int d) { return p.in_shape[size_t(d)]; };
  for (const Coord& c : out) {
    switch (p.type) {
      case LayerPlan::Type::Conv: {
        int off = p.k / 2;
        if (p.plane == ConvPlane::XY) {
          for (int dx = 0; dx < p.k; ++dx)
            for (int dy = 0; dy < p.k; ++dy) {
              int xs = c[0] + dx - off, ys = c[1] + dy - off;
              if (xs < 0 || xs >= in_extent(0) || ys < 0 || ys >= in_extent(1)) continue;
              for (int z = 0; z < in_extent(2); ++z) in.insert({xs, ys, z});
            }
        } else if (p.plane == ConvPlane::XZ) {
          for (int dx = 0; dx < p.k; ++dx)
            for (int dz = 0; dz < p.k; ++dz) {
              int xs = c[0] + dx - off, zs = c[2] + dz - off;
              if (xs < 0 || xs >= in_extent(0) || zs < 0 || zs >= in_extent(2)) continue;
              for (int y = 0; y < in_extent(1); ++y) in.insert({xs, y, zs});
            }
        } else {
          for (int dy = 0; dy < p.k; ++dy)
            for (int dz = 0; dz < p.k; ++dz) {
              int ys = c[1] + dy - off, zs = c[2] + dz - off;
              if (ys < 0 || ys >= in_extent(1) || zs < 0 || zs >= in_extent(2)) continue;
              for (int x = 0; x < in_extent(0); ++x) in.insert({x, ys, zs});
            }
        }
        break;
      }
      case LayerPlan::Type::Resize: {
        auto axis_support = [&](int target, int out_extent, int in_ext) {
          std::vector<int> s;
          double pos = out_extent > 1
                           ? double(target) * double(in_ext - 1) / double(out_extent - 1)
                           : 0.0;
          int lo = std::min(int(pos), in_ext - 1);
          int hi = std::min(lo + 1, in_ext - 1);
          s.push_back(lo);
          if (pos - double(lo) > 0.0 && hi != lo) s.push_back(hi);
          return s;
        };
        for (int xs : axis_support(c[0], p.out_shape[0], in_extent(0)))
          for (int ys : axis_support(c[1], p.out_shape[1], in_extent(1)))
            for (int zs : axis_support(c[2], p.out_shape[2], in_extent(2)))
              in.insert({xs, ys, zs});
        break;
      }
      default:  // BatchNorm / Relu / Dropout act elementwise here
        in.insert(c);
        break;
    }
  }
  return in;
}

CoordSet oracle_mask(const Network& net, int layer_index, Coord coords) {
  CoordSet cur = {coords};
  for (int i = layer_index; i >= 0; --i) cur = propagate_back(net.plan()[size_t(i)], cur);
  return cur;
}

NetworkSpec one_cycle_spec(int X, int Y, int Z, int k, CycleKind kind = CycleKind::Orthogonal,
                           Head head = Head::GlobalPool) {
  NetworkSpec spec;
  spec.input_shape = {X, Y, Z};
  spec.first_conv_features = std::max(X, std::max(Y, Z));
  spec.first_conv_kernel = k;
  CycleSpec c;
  c.kind = kind;
  c.kernel_size = k;
  c.width = spec.first_conv_features;
  spec.cycles = {c};
  spec.head = head;
  spec.n_classes = 2;
  return spec;
}

}  // namespace

TEST_CASE("rf_stats of a delta density") {
  SaliencyMap map;
  map.density = Tensor({5, 5});
  map.density.at({2, 3}) = 1.0;
  RFStats s = rf_stats(map, 5.0);
  CHECK(s.size == 0.0);
  CHECK(s.center[0] == 2.0);
  CHECK(s.center[1] == 3.0);
  CHECK(s.ellipse_major == 0.0);
  CHECK(s.ellipse_minor == 0.0);
  CHECK(s.normalized_size == 0.0);
}

TEST_CASE("rf_stats of the uniform 5x5 density is exactly 2") {
  SaliencyMap map;
  map.density = Tensor::full({5, 5}, 1.0 / 25.0);
  RFStats s = rf_stats(map, 5.0);
  CHECK(s.size == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.center[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.normalized_size == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("rf_stats of two equal point masses") {
  SaliencyMap map;
  map.density = Tensor({5, 5});
  map.density.at({0, 0}) = 0.5;
  map.density.at({4, 0}) = 0.5;
  RFStats s = rf_stats(map, 5.0);
  CHECK(s.center[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.center[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.size == doctest::Approx(2.0).epsilon(1e-12));  // sqrt(d^2/4) with d=4
}

TEST_CASE("rf_stats size is translation equivariant") {
  SeededRng rng(1);
  Tensor base({9, 9});
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y) base.at({x, y}) = rng.uniform(0.0, 1.0);
  double total = base.sum();
  for (size_t i = 0; i < base.size(); ++i) base[i] /= total;

  Tensor shifted({9, 9});
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y) shifted.at({x + 3, y + 4}) = base.at({x, y});

  SaliencyMap a, b;
  a.density = base;
  b.density = shifted;
  RFStats sa = rf_stats(a, 9.0), sb = rf_stats(b, 9.0);
  CHECK(std::fabs(sa.size - sb.size) <= 1e-10);
  CHECK(sb.center[0] == doctest::Approx(sa.center[0] + 3).epsilon(1e-9));
  CHECK(sb.center[1] == doctest::Approx(sa.center[1] + 4).epsilon(1e-9));
}

TEST_CASE("saliency of a single 1x1 conv is a delta at the activation") {
  NetworkSpec spec;
  spec.input_shape = {6, 6, 1};
  spec.first_conv_features = 3;
  spec.first_conv_kernel = 1;
  spec.head = Head::Flatten;
  spec.n_classes = 2;
  Network net(spec);
  SeededRng rng(2);
  net.init_weights(rng);

  Tensor image = testing::random_tensor({6, 6, 1}, rng, 0.1, 1.0);
  SaliencyMap map = saliency_map(net, 0, {4, 2, 1}, image);
  CHECK(map.density.at({4, 2}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(map.density.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("saliency support of one k=3 conv is the 3x3 window") {
  NetworkSpec spec;
  spec.input_shape = {7, 7, 2};
  spec.first_conv_features = 4;
  spec.first_conv_kernel = 3;
  spec.head = Head::Flatten;
  spec.n_classes = 2;
  Network net(spec);
  SeededRng rng(3);
  net.init_weights(rng);

  Tensor image = testing::random_tensor({7, 7, 2}, rng, 0.1, 1.0);
  SaliencyMap map = saliency_map(net, 0, {3, 3, 1}, image);
  for (int x = 0; x < 7; ++x)
    for (int y = 0; y < 7; ++y) {
      bool inside = std::abs(x - 3) <= 1 && std::abs(y - 3) <= 1;
      if (inside)
        CHECK(map.density.at({x, y}) > 0.0);
      else
        CHECK(map.density.at({x, y}) == 0.0);
    }
  CHECK(map.density.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("degenerate saliency raises instead of fabricating a density") {
  NetworkSpec spec;
  spec.input_shape = {4, 4, 1};
  spec.first_conv_features = 2;
  spec.first_conv_kernel = 1;
  spec.head = Head::Flatten;
  spec.n_classes = 2;
  Network net(spec);  // zero weights: gradient is identically zero
  Tensor image = Tensor::full({4, 4, 1}, 0.5);
  CHECK_THROWS_AS(saliency_map(net, 0, {0, 0, 0}, image), DegenerateSaliencyError);
}

TEST_CASE("connectivity mask of the input node is a single element") {
  Network net(one_cycle_spec(4, 4, 4, 3));
  DependencyMask mask = connectivity_mask(net, -1, {1, 2, 3});
  CHECK(mask.count() == 1);
  CHECK(mask.grid.on[(1 * 4 + 2) * 4 + 3] == 1);
}

TEST_CASE("one orthogonal cycle reaches the whole input") {
  for (int X : {2, 4, 8})
    for (int Y : {2, 4, 8})
      for (int Z : {2, 4, 8})
        for (int k : {1, 3}) {
          Network net(one_cycle_spec(X, Y, Z, k));
          int end = net.cycle_output_layers()[0];
          DependencyMask mask = connectivity_mask(net, end, {0, 0, 0});
          CHECK(mask.all());
        }
}

TEST_CASE("standard k=3 stacks grow the window by 2 per layer") {
  // L conv_xy layers: interior spatial side = min(W, 2L+1)
  for (int W : {5, 9, 16})
    for (int n_cycles : {1, 2}) {
      NetworkSpec spec = one_cycle_spec(W, W, 4, 3, CycleKind::Standard);
      spec.first_conv_kernel = 1;  // keep the first conv out of the window count
      spec.cycles[0].width = 4;
      spec.cycles.resize(size_t(n_cycles), spec.cycles[0]);
      // cubic width 4 != W would resize; use non-cubic cycles to keep geometry
      for (auto& c : spec.cycles) {
        c.cubic = false;
        c.out_extents = {4, 4, 4};
      }
      Network net(spec);
      int L = 3 * n_cycles;
      int end = net.cycle_output_layers().back();
      DependencyMask mask = connectivity_mask(net, end, {W / 2, W / 2, 1});
      auto ext = mask.bounding_extents();
      CHECK(ext[0] == std::min(W, 2 * L + 1));
      CHECK(ext[1] == std::min(W, 2 * L + 1));
      CHECK(ext[2] == 4);  // all input features of the cycle input
    }
}

TEST_CASE("dense-grid masks agree with the set-based oracle") {
  SeededRng rng(4);
  for (int trial = 0; trial < 12; ++trial) {
    int X = 2 + int(rng.next_below(4));
    int Y = 2 + int(rng.next_below(4));
    int Z = 1 + int(rng.next_below(3));
    int k = 1 + int(rng.next_below(3));
    CycleKind kind = rng.bernoulli(0.5) ? CycleKind::Orthogonal : CycleKind::Standard;
    NetworkSpec spec = one_cycle_spec(X, Y, Z, k, kind);
    if (rng.bernoulli(0.4)) {
      // non-cubic variant exercises resize-free chains
      spec.cycles[0].cubic = false;
      spec.cycles[0].out_extents = {2 + int(rng.next_below(3)), 2 + int(rng.next_below(3)),
                                    2 + int(rng.next_below(3))};
    }
    Network net(spec);

    int layer = int(rng.next_below(uint64_t(net.cycle_output_layers()[0] + 1)));
    const auto& shape = net.layer_shapes()[size_t(layer)];
    if (shape.size() != 3) continue;
    Coord coords = {int(rng.next_below(uint64_t(shape[0]))),
                    int(rng.next_below(uint64_t(shape[1]))),
                    int(rng.next_below(uint64_t(shape[2])))};

    DependencyMask mask = connectivity_mask(net, layer, {coords[0], coords[1], coords[2]});
    CoordSet want = oracle_mask(net, layer, coords);

    size_t on = 0;
    const auto& g = mask.grid;
    for (int x = 0; x < g.shape[0]; ++x)
      for (int y = 0; y < g.shape[1]; ++y)
        for (int z = 0; z < g.shape[2]; ++z) {
          bool bit = g.on[(size_t(x) * g.shape[1] + y) * g.shape[2] + size_t(z)] != 0;
          CHECK(bit == (want.count({x, y, z}) > 0));
          on += bit;
        }
    CHECK(on == want.size());
  }
}

TEST_CASE("saliency support is contained in the structural mask") {
  SeededRng rng(5);
  int checked = 0;
  for (int trial = 0; trial < 30 && checked < 12; ++trial) {
    int X = 4 + int(rng.next_below(4));
    int Z = 1 + int(rng.next_below(2));
    int k = 1 + int(rng.next_below(3));
    NetworkSpec spec = one_cycle_spec(X, X, Z, k,
                                      rng.bernoulli(0.5) ? CycleKind::Orthogonal
                                                         : CycleKind::Standard);
    spec.cycles[0].width = 4;
    Network net(spec);
    net.init_weights(rng);
    Tensor image = testing::random_tensor({X, X, Z}, rng, 0.05, 1.0);

    int layer = int(rng.next_below(uint64_t(net.layers().size() - 2)));
    const auto& shape = net.layer_shapes()[size_t(layer)];
    if (shape.size() != 3) continue;
    std::vector<int> coords = {int(rng.next_below(uint64_t(shape[0]))),
                               int(rng.next_below(uint64_t(shape[1]))),
                               int(rng.next_below(uint64_t(shape[2])))};
    SaliencyMap map;
    try {
      map = saliency_map(net, layer, coords, image);
    } catch (const DegenerateSaliencyError&) {
      continue;
    }
    DependencyMask mask = connectivity_mask(net, layer, coords);
    for (int x = 0; x < X; ++x)
      for (int y = 0; y < X; ++y)
        if (map.density.at({x, y}) > 0.0) CHECK(mask.spatial_on(x, y));
    ++checked;
  }
  CHECK(checked >= 8);
}

TEST_CASE("rf profile rows, determinism, and headers") {
  NetworkSpec spec = one_cycle_spec(8, 8, 2, 3);
  spec.cycles.push_back(spec.cycles[0]);
  Network net(spec);
  SeededRng rng(6);
  net.init_weights(rng);

  std::vector<Tensor> images;
  for (int i = 0; i < 4; ++i) images.push_back(testing::random_tensor({8, 8, 2}, rng, 0.1, 1.0));

  auto rows = rf_depth_profile(net, images, 12, 99);
  REQUIRE(rows.size() == 3);  // first conv + 2 cycles
  CHECK(rows[0].depth == 0);
  CHECK(rows[0].layers == 1);
  CHECK(rows[1].layers == 4);
  CHECK(rows[2].layers == 7);
  for (const auto& r : rows) {
    CHECK(r.n_samples > 0);
    CHECK(r.mean_norm_rf >= 0.0);
    CHECK(r.mean_norm_rf <= 0.5 * std::sqrt(2.0) + 1e-9);
  }

  // depth-0 support is a k-window: normalized size stays k/resolution-small
  CHECK(rows[0].mean_norm_rf <= 3.0 / 8.0);

  auto rows2 = rf_depth_profile(net, images, 12, 99);
  CHECK(rf_profile_csv(rows) == rf_profile_csv(rows2));
  CHECK(rf_profile_csv(rows).rfind("depth,layers,mean_norm_rf,std_norm_rf,n_samples\n", 0) == 0);
}

TEST_CASE("random-weight one-cycle network out-integrates the standard stack") {
  SeededRng rng(7);
  NetworkSpec ortho = one_cycle_spec(12, 12, 4, 3, CycleKind::Orthogonal);
  NetworkSpec standard = one_cycle_spec(12, 12, 4, 3, CycleKind::Standard);
  ortho.cycles[0].width = standard.cycles[0].width = 8;

  Network a(ortho), b(standard);
  SeededRng ra(100), rb(100);
  a.init_weights(ra);
  b.init_weights(rb);

  std::vector<Tensor> images;
  for (int i = 0; i < 4; ++i) images.push_back(testing::random_tensor({12, 12, 4}, rng, 0.1, 1.0));

  auto rows_a = rf_depth_profile(a, images, 16, 5);
  auto rows_b = rf_depth_profile(b, images, 16, 5);
  CHECK(rows_a[1].mean_norm_rf > rows_b[1].mean_norm_rf);
}

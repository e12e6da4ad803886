#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cyclenet/network.hpp"
#include "testing.hpp"

using namespace cyclenet;

namespace {

NetworkSpec pathfinder_spec(int width = 8, int k = 3, double dropout = 0.0) {
  NetworkSpec spec;
  spec.input_shape = {width, width, 1};
  spec.first_conv_features = width;
  spec.first_conv_kernel = k;
  CycleSpec c;
  c.kind = CycleKind::Orthogonal;
  c.kernel_size = k;
  c.width = width;
  c.dropout_rate = dropout;
  spec.cycles = {c};
  spec.head = Head::GlobalPool;
  spec.n_classes = 2;
  return spec;
}

int count_kind(const Network& net, const char* kind) {
  int n = 0;
  for (const auto& l : net.layers())
    if (std::string(l->kind()) == kind) ++n;
  return n;
}

// independent enumeration oracle: count actual elements of built tensors
long long enumerate_weight_params(Network& net) {
  long long total = 0;
  for (Param* p : net.params()) {
    bool is_weight = p->name.find(".weights") != std::string::npos;
    if (is_weight) total += (long long)p->value.size();
  }
  return total;
}

}  // namespace

TEST_CASE("orthogonal cycle builds three matched kernels") {
  CycleSpec c;
  c.kind = CycleKind::Orthogonal;
  c.kernel_size = 3;
  c.width = 8;
  c.dropout_rate = 0.1;
  auto layers = build_cycle(c, {8, 8, 8});
  REQUIRE(layers.size() == 12);  // 3 x (conv, bn, relu, dropout)
  const char* want[] = {"conv_xy", "batch_norm", "relu", "dropout",
                        "conv_xz", "batch_norm", "relu", "dropout",
                        "conv_yz", "batch_norm", "relu", "dropout"};
  for (size_t i = 0; i < layers.size(); ++i) CHECK(std::string(layers[i]->kind()) == want[i]);
  for (size_t i = 0; i < 12; i += 4) {
    auto* conv = dynamic_cast<ConvLayer*>(layers[i].get());
    REQUIRE(conv != nullptr);
    CHECK(conv->params()[0]->value.shape() == std::vector<int>{3, 3, 8, 8});
  }
}

TEST_CASE("standard cycle uses the (x,y) plane three times with identical kernel shapes") {
  CycleSpec c;
  c.kind = CycleKind::Standard;
  c.kernel_size = 3;
  c.width = 8;
  auto layers = build_cycle(c, {8, 8, 8});
  REQUIRE(layers.size() == 9);  // dropout omitted at rate 0
  for (size_t i = 0; i < layers.size(); i += 3) {
    CHECK(std::string(layers[i]->kind()) == "conv_xy");
    auto* conv = dynamic_cast<ConvLayer*>(layers[i].get());
    CHECK(conv->params()[0]->value.shape() == std::vector<int>{3, 3, 8, 8});
  }
}

TEST_CASE("one orthogonal cycle preserves a cubic shape") {
  NetworkSpec spec = pathfinder_spec(8, 3);
  Network net(spec);
  int cycle_end = net.cycle_output_layers()[0];
  CHECK(net.layer_shapes()[size_t(cycle_end)] == std::vector<int>{8, 8, 8});

  SeededRng rng(1);
  net.init_weights(rng);
  Tape tape;
  Tensor batch = testing::random_tensor({2, 8, 8, 1}, rng);
  Network::Trace trace = net.forward(tape, std::move(batch), Mode::Eval, nullptr);
  CHECK(tape.value(trace.layer_out[size_t(cycle_end)]).shape() == std::vector<int>{2, 8, 8, 8});
  CHECK(tape.value(trace.logits).shape() == std::vector<int>{2, 2});
}

TEST_CASE("pathfinder config structure") {
  Network net(pathfinder_spec(8, 3, 0.0));
  // first conv + 3x(conv,bn,relu) + pool + dense; no resize (already cubic),
  // dropout omitted at rate zero --> 11 layers beyond the first conv
  CHECK(int(net.layers().size()) == 12);
  CHECK(std::string(net.layers()[0]->kind()) == "conv_xy");
  CHECK(count_kind(net, "batch_norm") == 3);
  CHECK(count_kind(net, "relu") == 3);
  CHECK(count_kind(net, "dropout") == 0);
  CHECK(count_kind(net, "global_pool") == 1);
  CHECK(count_kind(net, "dense") == 1);

  Network with_dropout(pathfinder_spec(8, 3, 0.2));
  CHECK(int(with_dropout.layers().size()) == 15);
  CHECK(count_kind(with_dropout, "dropout") == 3);
}

TEST_CASE("zero cycle network is still runnable") {
  NetworkSpec spec;
  spec.input_shape = {6, 6, 2};
  spec.first_conv_features = 4;
  spec.first_conv_kernel = 3;
  spec.head = Head::Flatten;
  spec.n_classes = 3;
  Network net(spec);
  CHECK(net.layers().size() == 3);  // conv, flatten, dense
  CHECK(net.cycle_output_layers().empty());

  SeededRng rng(2);
  net.init_weights(rng);
  Tape tape;
  Network::Trace trace = net.forward(tape, testing::random_tensor({3, 6, 6, 2}, rng), Mode::Eval,
                                     nullptr);
  CHECK(tape.value(trace.logits).shape() == std::vector<int>{3, 3});
}

TEST_CASE("resize bridges differing cycle widths") {
  NetworkSpec spec;
  spec.input_shape = {10, 10, 1};
  spec.first_conv_features = 6;
  spec.first_conv_kernel = 3;
  CycleSpec a;
  a.width = 8;
  CycleSpec b;
  b.width = 5;
  spec.cycles = {a, b};
  spec.head = Head::Flatten;
  spec.n_classes = 2;
  Network net(spec);

  // first conv output (10,10,6) needs a resize to (8,8,8), then to (5,5,5)
  CHECK(count_kind(net, "resize") == 2);
  CHECK(net.layer_shapes()[size_t(net.cycle_output_layers()[0])] == std::vector<int>{8, 8, 8});
  CHECK(net.layer_shapes()[size_t(net.cycle_output_layers()[1])] == std::vector<int>{5, 5, 5});

  SeededRng rng(3);
  net.init_weights(rng);
  Tape tape;
  Network::Trace trace = net.forward(tape, testing::random_tensor({2, 10, 10, 1}, rng), Mode::Eval,
                                     nullptr);
  CHECK(tape.value(trace.logits).shape() == std::vector<int>{2, 2});
}

TEST_CASE("hybrid networks put standard cycles first") {
  NetworkSpec base;
  base.input_shape = {8, 8, 1};
  base.first_conv_features = 6;
  base.first_conv_kernel = 3;
  base.head = Head::Flatten;
  base.n_classes = 2;

  NetworkSpec spec = build_hybrid(2, 3, {6, 6, 6, 6, 6}, 3, base);
  REQUIRE(spec.cycles.size() == 5);
  Network net(spec);

  std::vector<std::string> conv_kinds;
  for (const auto& l : net.layers()) {
    std::string k = l->kind();
    if (k.rfind("conv_", 0) == 0) conv_kinds.push_back(k);
  }
  REQUIRE(conv_kinds.size() == 16);  // first conv + 15 cycle convs
  for (int i = 1; i <= 6; ++i) CHECK(conv_kinds[size_t(i)] == "conv_xy");
  const char* ortho[] = {"conv_xy", "conv_xz", "conv_yz"};
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < 3; ++j) CHECK(conv_kinds[size_t(7 + 3 * c + j)] == ortho[j]);

  // structural monotonicity: no orthogonal plane precedes a standard cycle
  bool seen_ortho = false;
  for (size_t i = 1; i < conv_kinds.size(); ++i) {
    if (conv_kinds[i] != "conv_xy") seen_ortho = true;
    if (seen_ortho) CHECK(conv_kinds[i] != "");  // placeholder to keep loop shape
  }
  CHECK_THROWS_AS(build_hybrid(2, 3, {6, 6}, 3, base), std::invalid_argument);
  CHECK_THROWS_AS(build_hybrid(-1, 3, {6, 6, 6}, 3, base), std::invalid_argument);
}

TEST_CASE("parameter count formulas") {
  SUBCASE("first layer k=3 z 4->8") {
    NetworkSpec spec;
    spec.input_shape = {5, 5, 4};
    spec.first_conv_features = 8;
    spec.first_conv_kernel = 3;
    spec.head = Head::Flatten;
    spec.n_classes = 2;
    ParamCount pc = count_params(spec);
    CHECK(pc.layers[0].weight_params == 288);  // 9 * 4 * 8
    CHECK(pc.layers[0].macs == 288 * 25);
    Network net(spec);
    auto* conv = dynamic_cast<ConvLayer*>(net.layers()[0].get());
    CHECK((long long)conv->params()[0]->value.size() == 288);
  }
  SUBCASE("cubic cycle width 8 k=3 gives 576 per layer for both kinds") {
    for (CycleKind kind : {CycleKind::Orthogonal, CycleKind::Standard}) {
      NetworkSpec spec = pathfinder_spec(8, 3);
      spec.cycles[0].kind = kind;
      ParamCount pc = count_params(spec);
      int conv_layers = 0;
      for (const auto& l : pc.layers)
        if (l.name.find("conv") != std::string::npos && l.name.find("first") == std::string::npos) {
          CHECK(l.weight_params == 576);  // 9 * 8 * 8
          ++conv_layers;
        }
      CHECK(conv_layers == 3);
    }
  }
  SUBCASE("non-cubic layer 2 with y 6->4 k=3") {
    NetworkSpec spec;
    spec.input_shape = {5, 6, 3};
    spec.first_conv_features = 3;
    spec.first_conv_kernel = 1;
    CycleSpec c;
    c.cubic = false;
    c.kernel_size = 3;
    c.out_extents = {3, 4, 5};  // z stays 3, y 6->4, x 5->5
    spec.cycles = {c};
    spec.head = Head::Flatten;
    spec.n_classes = 2;
    ParamCount pc = count_params(spec);
    long long layer2 = -1;
    for (const auto& l : pc.layers)
      if (l.name.find("conv2_xz") != std::string::npos) layer2 = l.weight_params;
    CHECK(layer2 == 216);  // 9 * 6 * 4

    // operation factors follow the convolved plane of each layer
    for (const auto& l : pc.layers) {
      if (l.name.find("conv1_xy") != std::string::npos) CHECK(l.macs == l.weight_params * 5 * 6);
      if (l.name.find("conv2_xz") != std::string::npos) CHECK(l.macs == l.weight_params * 5 * 3);
      if (l.name.find("conv3_yz") != std::string::npos) CHECK(l.macs == l.weight_params * 4 * 3);
    }
  }
}

TEST_CASE("cubic parameter parity between orthogonal and standard networks") {
  for (int n_cycles = 1; n_cycles <= 6; ++n_cycles) {
    std::vector<int> widths;
    for (int i = 0; i < n_cycles; ++i) widths.push_back(4 + 2 * i);

    NetworkSpec base;
    base.input_shape = {12, 12, 3};
    base.first_conv_features = 10;
    base.first_conv_kernel = 3;
    base.head = Head::Flatten;
    base.n_classes = 10;

    NetworkSpec ortho = build_hybrid(0, n_cycles, widths, 3, base);
    NetworkSpec standard = build_hybrid(n_cycles, 0, widths, 3, base);
    ParamCount po = count_params(ortho);
    ParamCount ps = count_params(standard);
    CHECK(po.weight_total == ps.weight_total);
    CHECK(po.bias_total == ps.bias_total);
    REQUIRE(po.layers.size() == ps.layers.size());
    for (size_t i = 0; i < po.layers.size(); ++i)
      CHECK(po.layers[i].weight_params == ps.layers[i].weight_params);

    // formulas match enumeration of the constructed tensors
    Network no(ortho), ns(standard);
    CHECK(enumerate_weight_params(no) == po.weight_total);
    CHECK(enumerate_weight_params(ns) == ps.weight_total);
  }
}

TEST_CASE("hybrid 2:3 has the same parameter count as 0:5 under cubic widths") {
  NetworkSpec base;
  base.input_shape = {10, 10, 3};
  base.first_conv_features = 8;
  base.first_conv_kernel = 3;
  base.head = Head::Flatten;
  base.n_classes = 4;
  std::vector<int> widths = {8, 8, 6, 6, 5};
  ParamCount hybrid = count_params(build_hybrid(2, 3, widths, 3, base));
  ParamCount pure = count_params(build_hybrid(0, 5, widths, 3, base));
  CHECK(hybrid.weight_total == pure.weight_total);
  CHECK(hybrid.mac_total == pure.mac_total);
}

TEST_CASE("invalid specs raise descriptive errors") {
  NetworkSpec spec;
  spec.input_shape = {8, 8, 1};
  spec.first_conv_features = 0;
  spec.n_classes = 2;
  CHECK_THROWS_WITH_AS(Network{spec}, doctest::Contains("first_conv_features"),
                       std::invalid_argument);

  spec.first_conv_features = 4;
  CycleSpec c;
  c.width = 0;
  spec.cycles = {c};
  CHECK_THROWS_WITH_AS(Network{spec}, doctest::Contains("width"), std::invalid_argument);

  spec.cycles[0].width = 8;
  spec.cycles[0].kernel_size = 0;
  CHECK_THROWS_WITH_AS(Network{spec}, doctest::Contains("kernel_size"), std::invalid_argument);

  CycleSpec bad;
  bad.width = 8;
  CHECK_THROWS_AS(build_cycle(bad, {4, 8, 8}), std::invalid_argument);
}

TEST_CASE("forward shape soundness on random valid specs") {
  SeededRng rng(20);
  for (int trial = 0; trial < 40; ++trial) {
    NetworkSpec spec;
    int w = 4 + int(rng.next_below(5));
    spec.input_shape = {w, w, 1 + int(rng.next_below(3))};
    spec.first_conv_features = 2 + int(rng.next_below(6));
    spec.first_conv_kernel = 1 + int(rng.next_below(4));
    int n_cycles = int(rng.next_below(3));
    for (int c = 0; c < n_cycles; ++c) {
      CycleSpec cs;
      cs.kind = rng.bernoulli(0.5) ? CycleKind::Orthogonal : CycleKind::Standard;
      cs.kernel_size = 1 + int(rng.next_below(3));
      if (rng.bernoulli(0.7)) {
        cs.cubic = true;
        cs.width = 3 + int(rng.next_below(5));
      } else {
        cs.cubic = false;
        cs.out_extents = {2 + int(rng.next_below(4)), 2 + int(rng.next_below(4)),
                          2 + int(rng.next_below(4))};
      }
      cs.dropout_rate = rng.bernoulli(0.5) ? 0.0 : 0.2;
      spec.cycles.push_back(cs);
    }
    spec.head = rng.bernoulli(0.5) ? Head::Flatten : Head::GlobalPool;
    spec.n_classes = 2 + int(rng.next_below(4));

    Network net(spec);
    net.init_weights(rng);
    SeededRng drop(rng.next_u64());
    Tape tape;
    Tensor batch = testing::random_tensor({2, spec.input_shape[0], spec.input_shape[1],
                                           spec.input_shape[2]},
                                          rng);
    Network::Trace trace = net.forward(tape, std::move(batch), Mode::Train, &drop);
    CHECK(tape.value(trace.logits).shape() == std::vector<int>{2, spec.n_classes});
  }
}

TEST_CASE("linear 1x1 cycle equals its dense decomposition") {
  SeededRng rng(21);

  SUBCASE("identity kernels give the identity operator") {
    const int X = 3, Y = 2, Z = 4;
    auto eye = [](int n) {
      ConvKernel k(1, n, n, false);
      for (int i = 0; i < n; ++i) k.weights.at({0, 0, i, i}) = 1.0;
      return k;
    };
    Tensor d = cycle_dense_equivalent(eye(Z), eye(Y), eye(X));
    REQUIRE(d.shape() == std::vector<int>{X * Y * Z, X * Y * Z});
    for (int i = 0; i < X * Y * Z; ++i)
      for (int j = 0; j < X * Y * Z; ++j)
        CHECK(d[size_t(i) * size_t(X * Y * Z) + size_t(j)] == (i == j ? 1.0 : 0.0));
  }

  SUBCASE("random kernels over exhaustive small shapes") {
    for (int X = 1; X <= 3; ++X)
      for (int Y = 1; Y <= 3; ++Y)
        for (int Z = 1; Z <= 3; ++Z)
          for (int rep = 0; rep < 3; ++rep) {
            int X1 = 1 + int(rng.next_below(3));
            int Y1 = 1 + int(rng.next_below(3));
            int Z1 = 1 + int(rng.next_below(3));
            ConvKernel k1 = testing::random_kernel(1, Z1, Z, rng, false);
            ConvKernel k2 = testing::random_kernel(1, Y1, Y, rng, false);
            ConvKernel k3 = testing::random_kernel(1, X1, X, rng, false);
            Tensor in = testing::random_tensor({X, Y, Z}, rng);

            Tensor cycle_out = conv2d_yz(conv2d_xz(conv2d_xy(in, k1), k2), k3);

            Tensor dense = cycle_dense_equivalent(k1, k2, k3);
            Tensor flat_out({X1 * Y1 * Z1});
            for (int r = 0; r < X1 * Y1 * Z1; ++r) {
              double acc = 0.0;
              const double* row = dense.data() + size_t(r) * in.size();
              for (size_t cidx = 0; cidx < in.size(); ++cidx) acc += row[cidx] * in[cidx];
              flat_out[size_t(r)] = acc;
            }
            CHECK(testing::max_abs_diff(
                      Tensor({X1, Y1, Z1}, std::move(flat_out.storage())), cycle_out) <= 1e-10);
          }
  }

  SUBCASE("dense operator equals the Kronecker product of the three factors") {
    const int X = 2, Y = 3, Z = 2;
    ConvKernel k1 = testing::random_kernel(1, 2, Z, rng, false);
    ConvKernel k2 = testing::random_kernel(1, 2, Y, rng, false);
    ConvKernel k3 = testing::random_kernel(1, 3, X, rng, false);
    Tensor dense = cycle_dense_equivalent(k1, k2, k3);

    // independent route: kron(kron(K3, K2), K1)
    auto kron = [](const Tensor& a, const Tensor& b) {
      int ar = a.extent(0), ac = a.extent(1), br = b.extent(0), bc = b.extent(1);
      Tensor out({ar * br, ac * bc});
      for (int i = 0; i < ar; ++i)
        for (int j = 0; j < ac; ++j)
          for (int p = 0; p < br; ++p)
            for (int q = 0; q < bc; ++q)
              out[(size_t(i) * br + p) * size_t(ac * bc) + size_t(j) * bc + size_t(q)] =
                  a[size_t(i) * ac + size_t(j)] * b[size_t(p) * bc + size_t(q)];
      return out;
    };
    auto as_matrix = [](const ConvKernel& k) {
      return Tensor({k.c_out(), k.c_in()}, k.weights.storage());
    };
    Tensor want = kron(kron(as_matrix(k3), as_matrix(k2)), as_matrix(k1));
    CHECK(testing::max_abs_diff(dense, want) <= 1e-12);
  }

  SUBCASE("non-unit kernels are rejected") {
    ConvKernel k1(3, 2, 2), k2(1, 2, 2), k3(1, 2, 2);
    CHECK_THROWS_AS(cycle_dense_equivalent(k1, k2, k3), std::invalid_argument);
  }
}

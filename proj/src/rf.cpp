#include "cyclenet/rf.hpp"

#include <cmath>
#include <cstdio>

namespace cyclenet {

std::array<int, 3> DependencyMask::bounding_extents() const {
  const int X = grid.shape[0], Y = grid.shape[1], Z = grid.shape[2];
  int lo[3] = {X, Y, Z}, hi[3] = {-1, -1, -1};
  for (int x = 0; x < X; ++x)
    for (int y = 0; y < Y; ++y)
      for (int z = 0; z < Z; ++z)
        if (grid.on[(size_t(x) * Y + y) * Z + size_t(z)]) {
          int idx[3] = {x, y, z};
          for (int d = 0; d < 3; ++d) {
            lo[d] = std::min(lo[d], idx[d]);
            hi[d] = std::max(hi[d], idx[d]);
          }
        }
  if (hi[0] < 0) return {0, 0, 0};
  return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
}

bool DependencyMask::spatial_on(int x, int y) const {
  const int Y = grid.shape[1], Z = grid.shape[2];
  for (int z = 0; z < Z; ++z)
    if (grid.on[(size_t(x) * Y + y) * Z + size_t(z)]) return true;
  return false;
}

namespace {

void check_coords(const std::vector<int>& coords, const std::vector<int>& shape,
                  const char* who) {
  if (coords.size() != shape.size())
    throw std::invalid_argument(std::string(who) + ": coords rank " +
                                std::to_string(coords.size()) + " does not match shape " +
                                shape_to_string(shape));
  for (size_t d = 0; d < shape.size(); ++d)
    if (coords[d] < 0 || coords[d] >= shape[d])
      throw std::invalid_argument(std::string(who) + ": coordinate " + std::to_string(coords[d]) +
                                  " out of bounds on axis " + std::to_string(d) + " of " +
                                  shape_to_string(shape));
}

size_t flat_index(const std::vector<int>& coords, const std::vector<int>& shape) {
  size_t f = 0;
  for (size_t d = 0; d < shape.size(); ++d) f = f * size_t(shape[d]) + size_t(coords[d]);
  return f;
}

}  // namespace

SaliencyMap saliency_map(Network& net, int layer_index, const std::vector<int>& coords,
                         const Tensor& image) {
  if (layer_index < 0 || layer_index >= int(net.layers().size()))
    throw std::invalid_argument("saliency_map: layer_index out of range");
  const std::vector<int>& out_shape = net.layer_shapes()[size_t(layer_index)];
  check_coords(coords, out_shape, "saliency_map");
  if (image.rank() != 3)
    throw std::invalid_argument("saliency_map: image must have axes (x,y,channels)");

  Tensor batch({1, image.extent(0), image.extent(1), image.extent(2)}, image.storage());
  Tape tape;
  Network::Trace trace = net.forward(tape, std::move(batch), Mode::Eval, nullptr);

  int node = trace.layer_out[size_t(layer_index)];
  Tensor seed(tape.value(node).shape());
  std::vector<int> batched_coords = coords;
  batched_coords.insert(batched_coords.begin(), 0);
  seed[flat_index(batched_coords, seed.shape())] = 1.0;
  tape.backward(node, std::move(seed));

  const Tensor& g = tape.grad(trace.input);
  const int X = image.extent(0), Y = image.extent(1), C = image.extent(2);
  Tensor density({X, Y});
  double total = 0.0;
  for (int x = 0; x < X; ++x)
    for (int y = 0; y < Y; ++y) {
      double acc = 0.0;
      for (int c = 0; c < C; ++c) acc += std::fabs(g[(size_t(x) * Y + y) * C + size_t(c)]);
      density[size_t(x) * Y + size_t(y)] = acc;
      total += acc;
    }
  if (total == 0.0)
    throw DegenerateSaliencyError("saliency_map: gradient is identically zero at layer " +
                                  std::to_string(layer_index));
  for (size_t i = 0; i < density.size(); ++i) density[i] /= total;

  SaliencyMap map;
  map.density = std::move(density);
  map.layer_index = layer_index;
  map.coords = coords;
  return map;
}

RFStats rf_stats(const SaliencyMap& map, double resolution) {
  if (map.density.rank() != 2) throw std::invalid_argument("rf_stats: density must be 2-D");
  if (resolution <= 0.0) throw std::invalid_argument("rf_stats: resolution must be positive");
  const int X = map.density.extent(0), Y = map.density.extent(1);
  const double* d = map.density.data();

  double mx = 0.0, my = 0.0;
  for (int x = 0; x < X; ++x)
    for (int y = 0; y < Y; ++y) {
      double w = d[size_t(x) * Y + size_t(y)];
      mx += w * double(x);
      my += w * double(y);
    }
  double cxx = 0.0, cxy = 0.0, cyy = 0.0;
  for (int x = 0; x < X; ++x)
    for (int y = 0; y < Y; ++y) {
      double w = d[size_t(x) * Y + size_t(y)];
      double dx = double(x) - mx, dy = double(y) - my;
      cxx += w * dx * dx;
      cxy += w * dx * dy;
      cyy += w * dy * dy;
    }

  RFStats s;
  s.center = {mx, my};
  s.cov_xx = cxx;
  s.cov_xy = cxy;
  s.cov_yy = cyy;
  s.size = std::sqrt(std::max(0.0, cxx + cyy));
  double half_tr = 0.5 * (cxx + cyy);
  double disc = std::sqrt(std::max(0.0, 0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy));
  double l1 = std::max(0.0, half_tr + disc);
  double l2 = std::max(0.0, half_tr - disc);
  s.ellipse_major = 3.0 * std::sqrt(l1);
  s.ellipse_minor = 3.0 * std::sqrt(l2);
  s.ellipse_angle = (cxy == 0.0 && cxx <= cyy) ? 1.5707963267948966
                                               : 0.5 * std::atan2(2.0 * cxy, cxx - cyy);
  s.normalized_size = s.size / resolution;
  return s;
}

DependencyMask connectivity_mask(Network& net, int layer_index, const std::vector<int>& coords) {
  const auto& layers = net.layers();
  if (layer_index < -1 || layer_index >= int(layers.size()))
    throw std::invalid_argument("connectivity_mask: layer_index out of range");
  std::vector<int> input_shape = {net.spec().input_shape[0], net.spec().input_shape[1],
                                  net.spec().input_shape[2]};

  const std::vector<int>& out_shape =
      layer_index < 0 ? input_shape : net.layer_shapes()[size_t(layer_index)];
  check_coords(coords, out_shape, "connectivity_mask");

  SupportGrid grid(out_shape);
  grid.on[flat_index(coords, out_shape)] = 1;
  for (int i = layer_index; i >= 0; --i) {
    const std::vector<int>& in_shape = i == 0 ? input_shape : net.layer_shapes()[size_t(i - 1)];
    SupportGrid in(in_shape);
    layers[size_t(i)]->back_support(grid, in);
    grid = std::move(in);
  }
  DependencyMask mask;
  mask.grid = std::move(grid);
  return mask;
}

DependencyMask connectivity_mask(const NetworkSpec& spec, int layer_index,
                                 const std::vector<int>& coords) {
  Network net(spec);
  return connectivity_mask(net, layer_index, coords);
}

std::vector<RFProfileRow> rf_depth_profile(Network& net, const std::vector<Tensor>& images,
                                           int samples_per_depth, uint64_t seed) {
  if (images.empty()) throw std::invalid_argument("rf_depth_profile: no images");
  if (samples_per_depth <= 0)
    throw std::invalid_argument("rf_depth_profile: samples_per_depth must be positive");
  const double resolution = double(net.spec().input_shape[0]);

  std::vector<std::pair<int, int>> depth_layers;  // (depth, layer index)
  depth_layers.push_back({0, net.first_conv_layer()});
  const auto& cycle_ends = net.cycle_output_layers();
  for (size_t c = 0; c < cycle_ends.size(); ++c) depth_layers.push_back({int(c) + 1, cycle_ends[c]});

  std::vector<RFProfileRow> rows;
  for (auto [depth, layer] : depth_layers) {
    SeededRng rng(SeededRng::derive(seed, uint64_t(depth)));
    const std::vector<int>& shape = net.layer_shapes()[size_t(layer)];
    const int n_images = int(images.size());
    const int image_pool = std::min(10, n_images);
    std::vector<int> image_ids(static_cast<size_t>(image_pool));
    for (int j = 0; j < image_pool; ++j) image_ids[size_t(j)] = int(rng.next_below(uint64_t(n_images)));

    std::vector<double> sizes;
    for (int s = 0; s < samples_per_depth; ++s) {
      const Tensor& image = images[size_t(image_ids[size_t(s % image_pool)])];
      bool got = false;
      for (int retry = 0; retry < 20 && !got; ++retry) {
        std::vector<int> coords(shape.size());
        for (size_t d = 0; d < shape.size(); ++d)
          coords[d] = int(rng.next_below(uint64_t(shape[d])));
        try {
          SaliencyMap map = saliency_map(net, layer, coords, image);
          sizes.push_back(rf_stats(map, resolution).normalized_size);
          got = true;
        } catch (const DegenerateSaliencyError&) {
          // resample the activation
        }
      }
      // after bounded retries the sample is recorded as missing
    }

    RFProfileRow row;
    row.depth = depth;
    row.layers = 1 + 3 * depth;
    row.n_samples = int(sizes.size());
    if (!sizes.empty()) {
      double mean = 0.0;
      for (double v : sizes) mean += v;
      mean /= double(sizes.size());
      double var = 0.0;
      for (double v : sizes) var += (v - mean) * (v - mean);
      var = sizes.size() > 1 ? var / double(sizes.size() - 1) : 0.0;
      row.mean_norm_rf = mean;
      row.std_norm_rf = std::sqrt(var);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string rf_profile_csv(const std::vector<RFProfileRow>& rows) {
  std::string out = "depth,layers,mean_norm_rf,std_norm_rf,n_samples\n";
  char buf[160];
  for (const RFProfileRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%d\n", r.depth, r.layers, r.mean_norm_rf,
                  r.std_norm_rf, r.n_samples);
    out += buf;
  }
  return out;
}

}  // namespace cyclenet

#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "cyclenet/network.hpp"

namespace cyclenet {

// The chosen activation had an exactly zero input gradient; the caller may
// retry another activation or image instead of fabricating a density.
struct DegenerateSaliencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Normalized per-pixel absolute input gradient of one activation.
struct SaliencyMap {
  Tensor density;  // (x, y), nonnegative, sums to 1
  int layer_index = -1;
  std::vector<int> coords;
};

struct RFStats {
  std::array<double, 2> center{};            // mean (x, y) in pixels
  double cov_xx = 0, cov_xy = 0, cov_yy = 0;  // covariance of the density
  double size = 0;                            // sqrt of total variance (pixels)
  double ellipse_major = 0, ellipse_minor = 0;  // semi-axes at 3 standard deviations
  double ellipse_angle = 0;                     // radians, major axis vs x
  double normalized_size = 0;                   // size / resolution
};

// Exact structural dependency set over the input tensor.
struct DependencyMask {
  SupportGrid grid;  // shape = network input (x, y, channels)

  bool all() const { return grid.all(); }
  size_t count() const { return grid.count(); }
  // side lengths of the bounding box of marked elements, per axis
  std::array<int, 3> bounding_extents() const;
  // true if some (x, y, z) with the given (x, y) is marked
  bool spatial_on(int x, int y) const;
};

// Gradient of the scalar activation `coords` of layer `layer_index`'s output
// with respect to the input image, absolute value summed across input
// channels, normalized to sum 1. The network runs in eval mode.
SaliencyMap saliency_map(Network& net, int layer_index, const std::vector<int>& coords,
                         const Tensor& image);

RFStats rf_stats(const SaliencyMap& map, double resolution);

// Structural connectivity of one activation: propagate index-support sets
// backward through every layer's access pattern. layer_index -1 names the
// input node itself.
DependencyMask connectivity_mask(Network& net, int layer_index, const std::vector<int>& coords);
DependencyMask connectivity_mask(const NetworkSpec& spec, int layer_index,
                                 const std::vector<int>& coords);

struct RFProfileRow {
  int depth = 0;        // 0 = first conv output, c = after cycle c
  int layers = 0;       // conv layers up to this point (1 + 3 * depth)
  double mean_norm_rf = 0.0;
  double std_norm_rf = 0.0;
  int n_samples = 0;
};

// Mean/std of normalized receptive-field size at the first-conv output and at
// every cycle output, over `samples_per_depth` random (activation, image)
// pairs drawn with the given seed. Degenerate saliencies are resampled a
// bounded number of times, then recorded as missing samples.
std::vector<RFProfileRow> rf_depth_profile(Network& net, const std::vector<Tensor>& images,
                                           int samples_per_depth, uint64_t seed);

// CSV with header depth,layers,mean_norm_rf,std_norm_rf,n_samples; UTF-8, LF
// line endings, '.' decimal separator.
std::string rf_profile_csv(const std::vector<RFProfileRow>& rows);

}  // namespace cyclenet

#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cyclenet/rng.hpp"
#include "cyclenet/tensor.hpp"

namespace cyclenet {

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Contour-integration task generator: dashed curved paths on a black
// background, two marker circles, binary connected/disconnected label.
// Geometry fields <= 0 resolve to defaults scaled from the 128x128 profile
// (dash 5, gap 3, stroke 1.6, circle 3), with small-size floors that keep
// strokes and markers visible at low resolutions.
struct GenConfig {
  int width = 128;
  int height = 128;
  int path_length = 6;       // dashes per path
  int distractor_factor = 5; // circle-free paths per target path
  int n_paths = 2;           // target-capable paths
  double dash_length = 0.0;
  double dash_gap = 0.0;
  double curvature_max = 0.6;  // radians of heading change per step
  double circle_radius = 0.0;
  double stroke_width = 0.0;
  uint64_t seed = 1;

  void validate() const;
  GenConfig resolved() const;  // validates and fills scaled defaults

  double margin() const { return circle_radius + 1.5; }
  // centers of circle pairs are kept at least this far apart for both labels,
  // so circle distance carries no label signal
  double min_pair_separation() const;
  // pixels closer than this link up in the stroke-connectivity check
  double link_radius() const;
};

struct Dash {
  double x0, y0, x1, y1;
};

struct PathGeometry {
  std::vector<Dash> dashes;
  std::array<double, 2> start{}, end{};
  double span() const;  // start-to-end distance
};

struct SceneGeometry {
  std::vector<PathGeometry> paths;  // targets first, then distractors
  std::vector<std::array<double, 2>> circles;
};

struct PathfinderSample {
  std::vector<uint8_t> pixels;  // width*height bytes, row-major (rows = y)
  int label = 0;                // 1 = connected
  uint64_t seed = 0;
  std::array<double, 2> circle_a{}, circle_b{};
  SceneGeometry scene;
};

// Random dashed walk of cfg.path_length dashes: each step advances
// dash_length + dash_gap along a heading perturbed by
// uniform(-curvature_max, +curvature_max). Candidates leaving the margins or
// approaching an existing path's strokes closer than 2*dash_gap are rejected
// and redrawn (bounded retries).
PathGeometry gen_path(const GenConfig& cfg, SeededRng& rng,
                      const std::vector<PathGeometry>& existing);

PathfinderSample gen_sample(const GenConfig& cfg, int label, SeededRng& rng);

// Antialiased rendering (2x supersampling, box downsample) of paths as
// stroked dashes and circles as filled discs; returns width*height bytes.
std::vector<uint8_t> render_scene(const GenConfig& cfg, const SceneGeometry& scene);

// Reachability along rendered strokes: BFS over pixels >= threshold linking
// pixels within link_radius. Used by the generator to reject samples whose
// raster contradicts the constructed label.
bool strokes_connect(const std::vector<uint8_t>& pixels, int width, int height,
                     std::array<double, 2> a, std::array<double, 2> b, double link_radius,
                     uint8_t threshold = 38);

// ---------------------------------------------------------------------------
// PFDS container: magic "PFDS"; little-endian u32 version=1, sample_count,
// width, height; per sample one label byte (0|1) then width*height grayscale
// bytes, row-major. No padding, no compression.
// ---------------------------------------------------------------------------

struct PfdsDataset {
  int width = 0, height = 0;
  std::vector<uint8_t> labels;
  std::vector<uint8_t> pixels;  // sample-major, width*height bytes each

  int count() const { return int(labels.size()); }
  const uint8_t* image(int i) const { return pixels.data() + size_t(i) * size_t(width) * height; }
  // (x, y, 1) tensor in [0,1]: t(x, y, 0) = pixels[y*width + x] / 255
  Tensor image_tensor(int i) const;
};

void write_pfds(const std::string& path, const PfdsDataset& ds);
PfdsDataset read_pfds(const std::string& path);

struct DatasetPaths {
  std::string train, test;
};

// Balanced dataset pair (labels alternate connected/disconnected), per-sample
// seeds derived from cfg.seed with train/test index ranges disjoint. Files go
// to <out_prefix>_train.pfds and <out_prefix>_test.pfds.
DatasetPaths gen_dataset(const GenConfig& cfg, int n_train, int n_test,
                         const std::string& out_prefix);

// In-memory variant used by tests and the acceptance suite.
PfdsDataset gen_dataset_memory(const GenConfig& cfg, int count, uint64_t index_offset = 0);

}  // namespace cyclenet

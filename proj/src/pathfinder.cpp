#include "cyclenet/pathfinder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>

#include "cyclenet/config.hpp"

namespace cyclenet {

namespace {
constexpr int kSupersample = 2;
constexpr int kPathAttempts = 60;
constexpr int kSampleAttempts = 40;
}  // namespace

void GenConfig::validate() const {
  if (width < 16 || height < 16) throw std::invalid_argument("GenConfig: width/height must be >= 16");
  if (path_length < 2) throw std::invalid_argument("GenConfig: path_length must be >= 2");
  if (distractor_factor < 0) throw std::invalid_argument("GenConfig: distractor_factor must be >= 0");
  if (n_paths < 2) throw std::invalid_argument("GenConfig: n_paths must be >= 2");
  if (curvature_max < 0.0) throw std::invalid_argument("GenConfig: curvature_max must be >= 0");
}

GenConfig GenConfig::resolved() const {
  validate();
  GenConfig r = *this;
  double scale = double(std::min(width, height)) / 128.0;
  if (r.dash_length <= 0.0) r.dash_length = std::max(1.1, 5.0 * scale);
  if (r.dash_gap <= 0.0) r.dash_gap = std::max(0.7, 3.0 * scale);
  if (r.stroke_width <= 0.0) r.stroke_width = std::max(0.9, 1.6 * scale);
  if (r.circle_radius <= 0.0) r.circle_radius = std::max(1.4, 3.0 * scale);
  double usable = double(std::min(width, height)) - 2.0 * r.margin();
  if (usable < 4.0 * (r.dash_length + r.dash_gap))
    throw std::invalid_argument("GenConfig: geometry does not fit the frame");
  return r;
}

double GenConfig::min_pair_separation() const {
  double arc = double(path_length) * (dash_length + dash_gap) - dash_gap;
  return std::min(0.35 * double(std::min(width, height)), 0.7 * arc);
}

double GenConfig::link_radius() const {
  return std::max(1.2, dash_gap - stroke_width + 1.0);
}

double PathGeometry::span() const {
  return std::hypot(end[0] - start[0], end[1] - start[1]);
}

namespace {

double point_seg_dist(double px, double py, const Dash& d) {
  double vx = d.x1 - d.x0, vy = d.y1 - d.y0;
  double wx = px - d.x0, wy = py - d.y0;
  double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? std::clamp((wx * vx + wy * vy) / vv, 0.0, 1.0) : 0.0;
  return std::hypot(wx - t * vx, wy - t * vy);
}

double seg_seg_dist(const Dash& a, const Dash& b) {
  // segments are short; endpoint-vs-segment distances cover the minimum
  // unless the segments intersect, so test for intersection first
  auto orient = [](double ax, double ay, double bx, double by, double cx, double cy) {
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
  };
  double o1 = orient(a.x0, a.y0, a.x1, a.y1, b.x0, b.y0);
  double o2 = orient(a.x0, a.y0, a.x1, a.y1, b.x1, b.y1);
  double o3 = orient(b.x0, b.y0, b.x1, b.y1, a.x0, a.y0);
  double o4 = orient(b.x0, b.y0, b.x1, b.y1, a.x1, a.y1);
  if (((o1 > 0) != (o2 > 0)) && ((o3 > 0) != (o4 > 0))) return 0.0;
  double m = point_seg_dist(a.x0, a.y0, b);
  m = std::min(m, point_seg_dist(a.x1, a.y1, b));
  m = std::min(m, point_seg_dist(b.x0, b.y0, a));
  m = std::min(m, point_seg_dist(b.x1, b.y1, a));
  return m;
}

double path_clearance(const Dash& d, const std::vector<PathGeometry>& others) {
  double m = HUGE_VAL;
  for (const PathGeometry& p : others)
    for (const Dash& o : p.dashes) m = std::min(m, seg_seg_dist(d, o));
  return m;
}

}  // namespace

PathGeometry gen_path(const GenConfig& raw, SeededRng& rng,
                      const std::vector<PathGeometry>& existing) {
  GenConfig cfg = raw.resolved();
  const double m = cfg.margin();
  const double lo_x = m, hi_x = double(cfg.width) - m;
  const double lo_y = m, hi_y = double(cfg.height) - m;
  const double step = cfg.dash_length + cfg.dash_gap;
  // reject dashes whose stroke surfaces come closer than 2 * dash_gap
  const double clearance = 2.0 * cfg.dash_gap + cfg.stroke_width;

  for (int attempt = 0; attempt < kPathAttempts; ++attempt) {
    PathGeometry path;
    double x = rng.uniform(lo_x, hi_x);
    double y = rng.uniform(lo_y, hi_y);
    double heading = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    bool ok = true;
    for (int i = 0; i < cfg.path_length; ++i) {
      heading += rng.uniform(-cfg.curvature_max, cfg.curvature_max);
      double dx = std::cos(heading), dy = std::sin(heading);
      Dash d{x, y, x + dx * cfg.dash_length, y + dy * cfg.dash_length};
      if (d.x1 < lo_x || d.x1 > hi_x || d.y1 < lo_y || d.y1 > hi_y ||
          d.x0 < lo_x || d.x0 > hi_x || d.y0 < lo_y || d.y0 > hi_y) {
        ok = false;
        break;
      }
      if (path_clearance(d, existing) < clearance) {
        ok = false;
        break;
      }
      path.dashes.push_back(d);
      if (i == 0) path.start = {d.x0, d.y0};
      path.end = {d.x1, d.y1};
      x += dx * step;
      y += dy * step;
    }
    if (ok) return path;
  }
  throw GenerationError("gen_path: no valid placement after " + std::to_string(kPathAttempts) +
                        " attempts");
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

std::vector<uint8_t> render_scene(const GenConfig& raw, const SceneGeometry& scene) {
  GenConfig cfg = raw.resolved();
  const int W = cfg.width, H = cfg.height, SS = kSupersample;
  const int Ws = W * SS, Hs = H * SS;
  std::vector<float> canvas(size_t(Ws) * Hs, 0.0f);

  auto splat = [&](double cx0, double cy0, double cx1, double cy1, double radius) {
    // coverage of a capsule (segment grown by `radius`), coordinates in
    // image units, canvas in supersampled units
    double x0 = cx0 * SS, y0 = cy0 * SS, x1 = cx1 * SS, y1 = cy1 * SS;
    double r = radius * SS;
    int bx0 = std::max(0, int(std::floor(std::min(x0, x1) - r - 1)));
    int bx1 = std::min(Ws - 1, int(std::ceil(std::max(x0, x1) + r + 1)));
    int by0 = std::max(0, int(std::floor(std::min(y0, y1) - r - 1)));
    int by1 = std::min(Hs - 1, int(std::ceil(std::max(y0, y1) + r + 1)));
    Dash seg{x0, y0, x1, y1};
    for (int py = by0; py <= by1; ++py)
      for (int px = bx0; px <= bx1; ++px) {
        double d = point_seg_dist(px + 0.5, py + 0.5, seg);
        double a = std::clamp(r + 0.5 - d, 0.0, 1.0);
        float& c = canvas[size_t(py) * Ws + px];
        c = std::max(c, float(a));
      }
  };

  const double hw = cfg.stroke_width * 0.5;
  for (const PathGeometry& p : scene.paths)
    for (const Dash& d : p.dashes) splat(d.x0, d.y0, d.x1, d.y1, hw);
  for (const auto& c : scene.circles) splat(c[0], c[1], c[0], c[1], cfg.circle_radius);

  std::vector<uint8_t> out(size_t(W) * H);
  const double inv = 1.0 / double(SS * SS);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < SS; ++sy)
        for (int sx = 0; sx < SS; ++sx) acc += canvas[size_t(y * SS + sy) * Ws + size_t(x * SS + sx)];
      out[size_t(y) * W + size_t(x)] = uint8_t(std::lround(std::clamp(acc * inv, 0.0, 1.0) * 255.0));
    }
  return out;
}

bool strokes_connect(const std::vector<uint8_t>& pixels, int width, int height,
                     std::array<double, 2> a, std::array<double, 2> b, double link_radius,
                     uint8_t threshold) {
  auto clamp_px = [&](double v, int hi) { return std::clamp(int(std::lround(v - 0.5)), 0, hi - 1); };
  int ax = clamp_px(a[0], width), ay = clamp_px(a[1], height);
  int bx = clamp_px(b[0], width), by = clamp_px(b[1], height);

  std::vector<std::pair<int, int>> offsets;
  int r = int(std::ceil(link_radius));
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      if (dx == 0 && dy == 0) continue;
      if (double(dx) * dx + double(dy) * dy <= link_radius * link_radius + 1e-9)
        offsets.push_back({dx, dy});
    }

  auto lit = [&](int x, int y) { return pixels[size_t(y) * width + size_t(x)] >= threshold; };
  if (!lit(ax, ay) || !lit(bx, by)) return false;

  std::vector<uint8_t> seen(size_t(width) * height, 0);
  std::deque<std::pair<int, int>> queue;
  queue.push_back({ax, ay});
  seen[size_t(ay) * width + size_t(ax)] = 1;
  while (!queue.empty()) {
    auto [x, y] = queue.front();
    queue.pop_front();
    if (x == bx && y == by) return true;
    for (auto [dx, dy] : offsets) {
      int nx = x + dx, ny = y + dy;
      if (nx < 0 || nx >= width || ny < 0 || ny >= height) continue;
      size_t i = size_t(ny) * width + size_t(nx);
      if (seen[i] || !lit(nx, ny)) continue;
      seen[i] = 1;
      queue.push_back({nx, ny});
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// sample generation
// ---------------------------------------------------------------------------

namespace {

double endpoint_clearance(const std::array<double, 2>& pt, const PathGeometry& path) {
  double m = HUGE_VAL;
  for (const Dash& d : path.dashes) m = std::min(m, point_seg_dist(pt[0], pt[1], d));
  return m;
}

}  // namespace

PathfinderSample gen_sample(const GenConfig& raw, int label, SeededRng& rng) {
  GenConfig cfg = raw.resolved();
  if (label != 0 && label != 1) throw std::invalid_argument("gen_sample: label must be 0 or 1");
  const double sep = cfg.min_pair_separation();

  for (int attempt = 0; attempt < kSampleAttempts; ++attempt) {
    std::vector<PathGeometry> paths;
    // target path A; when connected it carries both circles, so force a
    // usable endpoint separation for either label
    PathGeometry a;
    bool ok = false;
    for (int t = 0; t < kPathAttempts && !ok; ++t) {
      try {
        a = gen_path(cfg, rng, paths);
      } catch (const GenerationError&) {
        break;
      }
      ok = label == 0 || a.span() >= sep;
    }
    if (!ok) continue;
    paths.push_back(a);

    PathGeometry b;
    std::array<double, 2> circle_a{}, circle_b{};
    ok = false;
    for (int t = 0; t < kPathAttempts && !ok; ++t) {
      try {
        b = gen_path(cfg, rng, paths);
      } catch (const GenerationError&) {
        break;
      }
      if (label == 1) {
        circle_a = a.start;
        circle_b = a.end;
        ok = true;
      } else {
        circle_a = rng.bernoulli(0.5) ? a.start : a.end;
        circle_b = rng.bernoulli(0.5) ? b.start : b.end;
        double d = std::hypot(circle_a[0] - circle_b[0], circle_a[1] - circle_b[1]);
        ok = d >= sep;
      }
    }
    if (!ok) continue;
    paths.push_back(b);

    // no target endpoint may sit within 2 * circle_radius of the other
    // target's stroke; circle_a lives on A, circle_b on A (connected) or B
    const double clear_need = 2.0 * cfg.circle_radius + 0.5 * cfg.stroke_width;
    if (endpoint_clearance(circle_a, paths[1]) < clear_need) continue;
    if (endpoint_clearance(circle_b, label == 1 ? paths[1] : paths[0]) < clear_need) continue;

    std::vector<std::array<double, 2>> circle_pts = {circle_a, circle_b};
    int want_distractors = cfg.distractor_factor * cfg.n_paths;
    bool placed_all = true;
    for (int i = 0; i < want_distractors && placed_all; ++i) {
      bool placed = false;
      for (int t = 0; t < kPathAttempts && !placed; ++t) {
        PathGeometry d;
        try {
          d = gen_path(cfg, rng, paths);
        } catch (const GenerationError&) {
          break;
        }
        bool clear = true;
        for (const auto& pt : circle_pts)
          if (endpoint_clearance(pt, d) < clear_need) clear = false;
        if (clear) {
          paths.push_back(d);
          placed = true;
        }
      }
      placed_all = placed;
    }
    if (!placed_all) continue;

    PathfinderSample sample;
    sample.label = label;
    sample.circle_a = circle_a;
    sample.circle_b = circle_b;
    sample.scene.paths = paths;
    sample.scene.circles = {circle_a, circle_b};
    sample.pixels = render_scene(cfg, sample.scene);

    bool connected = strokes_connect(sample.pixels, cfg.width, cfg.height, circle_a, circle_b,
                                     cfg.link_radius());
    if (connected == (label == 1)) return sample;
    // raster contradicted the construction; retry with fresh geometry
  }
  throw GenerationError("gen_sample: no consistent sample after " +
                        std::to_string(kSampleAttempts) + " attempts");
}

// ---------------------------------------------------------------------------
// PFDS
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& out, uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

}  // namespace

Tensor PfdsDataset::image_tensor(int i) const {
  Tensor t({width, height, 1});
  const uint8_t* px = image(i);
  for (int x = 0; x < width; ++x)
    for (int y = 0; y < height; ++y)
      t[size_t(x) * height + size_t(y)] = double(px[size_t(y) * width + size_t(x)]) / 255.0;
  return t;
}

void write_pfds(const std::string& path, const PfdsDataset& ds) {
  if (int(ds.labels.size()) != ds.count() ||
      ds.pixels.size() != size_t(ds.count()) * size_t(ds.width) * ds.height)
    throw std::invalid_argument("write_pfds: inconsistent dataset buffers");
  std::string header = "PFDS";
  put_u32(header, 1);
  put_u32(header, uint32_t(ds.count()));
  put_u32(header, uint32_t(ds.width));
  put_u32(header, uint32_t(ds.height));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(header.data(), std::streamsize(header.size()));
  const size_t img = size_t(ds.width) * ds.height;
  for (int i = 0; i < ds.count(); ++i) {
    char label = char(ds.labels[size_t(i)]);
    out.write(&label, 1);
    out.write(reinterpret_cast<const char*>(ds.pixels.data() + size_t(i) * img),
              std::streamsize(img));
  }
  if (!out) throw IoError("write failed: " + path);
}

PfdsDataset read_pfds(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 20 || std::memcmp(bytes.data(), "PFDS", 4) != 0)
    throw IoError("not a PFDS file: " + path);
  uint32_t version = get_u32(bytes.data() + 4);
  if (version != 1) throw IoError("unsupported PFDS version " + std::to_string(version));
  PfdsDataset ds;
  uint32_t count = get_u32(bytes.data() + 8);
  ds.width = int(get_u32(bytes.data() + 12));
  ds.height = int(get_u32(bytes.data() + 16));
  if (ds.width <= 0 || ds.height <= 0) throw IoError("corrupt PFDS header: " + path);
  const size_t img = size_t(ds.width) * ds.height;
  size_t need = 20 + size_t(count) * (img + 1);
  if (bytes.size() != need)
    throw IoError("truncated PFDS file: " + path + " (have " + std::to_string(bytes.size()) +
                  " bytes, want " + std::to_string(need) + ")");
  ds.labels.resize(count);
  ds.pixels.resize(size_t(count) * img);
  size_t off = 20;
  for (uint32_t i = 0; i < count; ++i) {
    uint8_t label = bytes[off++];
    if (label > 1) throw IoError("corrupt PFDS label at sample " + std::to_string(i));
    ds.labels[i] = label;
    std::memcpy(ds.pixels.data() + size_t(i) * img, bytes.data() + off, img);
    off += img;
  }
  return ds;
}

PfdsDataset gen_dataset_memory(const GenConfig& raw, int count, uint64_t index_offset) {
  GenConfig cfg = raw.resolved();
  PfdsDataset ds;
  ds.width = cfg.width;
  ds.height = cfg.height;
  ds.labels.reserve(size_t(count));
  ds.pixels.reserve(size_t(count) * size_t(cfg.width) * cfg.height);
  for (int i = 0; i < count; ++i) {
    int label = (i % 2 == 0) ? 1 : 0;  // alternating keeps every prefix balanced
    uint64_t sample_seed = SeededRng::derive(cfg.seed, index_offset + uint64_t(i));
    SeededRng rng(sample_seed);
    PathfinderSample s = gen_sample(cfg, label, rng);
    ds.labels.push_back(uint8_t(s.label));
    ds.pixels.insert(ds.pixels.end(), s.pixels.begin(), s.pixels.end());
  }
  return ds;
}

DatasetPaths gen_dataset(const GenConfig& raw, int n_train, int n_test,
                         const std::string& out_prefix) {
  if (n_train <= 0 || n_test <= 0)
    throw std::invalid_argument("gen_dataset: sample counts must be positive");
  GenConfig cfg = raw.resolved();
  DatasetPaths paths{out_prefix + "_train.pfds", out_prefix + "_test.pfds"};
  // train uses sample indices [0, n_train), test continues after them
  write_pfds(paths.train, gen_dataset_memory(cfg, n_train, 0));
  write_pfds(paths.test, gen_dataset_memory(cfg, n_test, uint64_t(n_train)));
  return paths;
}

}  // namespace cyclenet

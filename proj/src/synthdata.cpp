#include "srtod/synthdata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "srtod/errors.hpp"

namespace srtod {

namespace {

constexpr int kMaxPlacementRetries = 100;
constexpr double kEdgeMargin = 1.0;

enum class Shape { kDisc, kRect, kCross };

struct PlacedObject {
  GroundTruthBox box;
  Shape shape;
  double color[3];  // object RGB, channel mean carries the contrast
};

double gray_at(const ImageU8& img, int y, int x) {
  return (double(img.at(y, x, 0)) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
}

void paint_background(ImageU8& img, const SceneConfig& cfg, Rng& rng) {
  const int H = cfg.height, W = cfg.width;
  // Mild zero-mean channel tint keeps the scene colored while leaving the
  // per-pixel gray level equal to the generated field.
  double tint[3];
  tint[0] = rng.uniform(-10.0, 10.0);
  tint[1] = rng.uniform(-10.0, 10.0);
  tint[2] = -(tint[0] + tint[1]);
  auto put = [&](int y, int x, double g) {
    for (int c = 0; c < 3; ++c) {
      double v = g + tint[c];
      v = v < 0 ? 0 : (v > 255 ? 255 : v);
      img.at(y, x, c) = uint8_t(std::lround(v));
    }
  };
  switch (cfg.background) {
    case Background::kFlat: {
      const double g = rng.uniform(40.0, 120.0);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) put(y, x, g);
      break;
    }
    case Background::kGradient: {
      const double g0 = rng.uniform(30.0, 90.0);
      const double g1 = rng.uniform(90.0, 140.0);
      const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      const double dx = std::cos(ang), dy = std::sin(ang);
      const double diag = std::sqrt(double(H) * H + double(W) * W);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double s = (x * dx + y * dy) / diag + 0.5;
          put(y, x, g0 + (g1 - g0) * std::clamp(s, 0.0, 1.0));
        }
      break;
    }
    case Background::kNoise: {
      const double base = rng.uniform(60.0, 110.0);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) put(y, x, base + rng.uniform(-25.0, 25.0));
      break;
    }
    case Background::kTextured: {
      // Smooth field: a few random low-frequency sinusoids.
      const double base = rng.uniform(60.0, 110.0);
      struct Wave { double fy, fx, phase, amp; };
      Wave waves[4];
      for (auto& w : waves) {
        w.fy = rng.uniform(0.5, 3.0) * 2.0 * 3.14159265358979323846 / H;
        w.fx = rng.uniform(0.5, 3.0) * 2.0 * 3.14159265358979323846 / W;
        w.phase = rng.uniform(0.0, 6.28318530717958647692);
        w.amp = rng.uniform(5.0, 12.0);
      }
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double g = base;
          for (const auto& w : waves) g += w.amp * std::sin(w.fy * y + w.fx * x + w.phase);
          put(y, x, std::clamp(g, 25.0, 145.0));
        }
      break;
    }
  }
}

bool inside_shape(const PlacedObject& obj, double px, double py) {
  const auto& b = obj.box;
  const double cx = 0.5 * (b.x_min + b.x_max);
  const double cy = 0.5 * (b.y_min + b.y_max);
  const double w = b.width(), h = b.height();
  switch (obj.shape) {
    case Shape::kDisc: {
      const double rx = w / 2.0, ry = h / 2.0;
      const double nx = (px - cx) / rx, ny = (py - cy) / ry;
      return nx * nx + ny * ny <= 1.0;
    }
    case Shape::kRect:
      return px >= b.x_min && px < b.x_max && py >= b.y_min && py < b.y_max;
    case Shape::kCross: {
      const bool in_h = std::abs(py - cy) <= h / 6.0 && px >= b.x_min && px < b.x_max;
      const bool in_v = std::abs(px - cx) <= w / 6.0 && py >= b.y_min && py < b.y_max;
      return in_h || in_v;
    }
  }
  return false;
}

/// Mean gray level of the 2px ring around a box (clipped to the image).
double ring_mean(const ImageU8& img, const GroundTruthBox& b) {
  const int x0 = std::max(0, int(std::floor(b.x_min)) - 2);
  const int y0 = std::max(0, int(std::floor(b.y_min)) - 2);
  const int x1 = std::min(img.width - 1, int(std::ceil(b.x_max)) + 2);
  const int y1 = std::min(img.height - 1, int(std::ceil(b.y_max)) + 2);
  double acc = 0.0;
  int n = 0;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      if (px >= b.x_min && px < b.x_max && py >= b.y_min && py < b.y_max) continue;
      acc += gray_at(img, y, x);
      ++n;
    }
  return n > 0 ? acc / n : 127.0;
}

void draw_object(ImageU8& img, const PlacedObject& obj) {
  const auto& b = obj.box;
  const int x0 = std::max(0, int(std::floor(b.x_min)));
  const int y0 = std::max(0, int(std::floor(b.y_min)));
  const int x1 = std::min(img.width - 1, int(std::ceil(b.x_max)));
  const int y1 = std::min(img.height - 1, int(std::ceil(b.y_max)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside_shape(obj, x + 0.5, y + 0.5))
        for (int c = 0; c < 3; ++c)
          img.at(y, x, c) = uint8_t(std::lround(obj.color[c]));
}

/// Repaints the box neighborhood to a flat level so the requested contrast
/// fits inside the 8-bit range (only needed for high-contrast configs).
void flatten_neighborhood(ImageU8& img, const GroundTruthBox& b, double level) {
  const int x0 = std::max(0, int(std::floor(b.x_min)) - 2);
  const int y0 = std::max(0, int(std::floor(b.y_min)) - 2);
  const int x1 = std::min(img.width - 1, int(std::ceil(b.x_max)) + 2);
  const int y1 = std::min(img.height - 1, int(std::ceil(b.y_max)) + 2);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = uint8_t(std::lround(level));
}

bool boxes_intersect(const GroundTruthBox& a, const GroundTruthBox& b) {
  return a.x_min < b.x_max && b.x_min < a.x_max && a.y_min < b.y_max &&
         b.y_min < a.y_max;
}

}  // namespace

void SceneConfig::validate() const {
  if (height <= 0 || width <= 0)
    throw ConfigError("scene: image dims must be positive");
  if (objects_min < 0 || objects_max < objects_min)
    throw ConfigError("scene: bad objects_per_image range");
  if (size_min < 2.0)
    throw ConfigError("scene: object size minimum must be >= 2");
  if (size_max <= size_min)
    throw ConfigError("scene: object size range empty");
  if (size_max > double(std::min(height, width)))
    throw ConfigError("scene: objects cannot fit inside image bounds");
  if (contrast <= 0.0 || contrast > 1.0)
    throw ConfigError("scene: contrast must be in (0,1]");
  if (classes < 1) throw ConfigError("scene: classes must be >= 1");
}

std::pair<ImageU8, std::vector<GroundTruthBox>> render_scene(
    const SceneConfig& cfg, uint64_t seed, bool* overlap_out) {
  cfg.validate();
  Rng rng = Rng::derive(seed, "scene");
  ImageU8 img;
  img.height = cfg.height;
  img.width = cfg.width;
  img.data.assign(size_t(cfg.height) * cfg.width * 3, 0);
  paint_background(img, cfg, rng);

  const int n = int(rng.uniform_int(cfg.objects_min, cfg.objects_max));
  std::vector<GroundTruthBox> boxes;
  std::vector<PlacedObject> objects;
  bool any_overlap = false;

  for (int i = 0; i < n; ++i) {
    bool placed = false;
    GroundTruthBox box;
    int class_id = 0;
    Shape shape = Shape::kDisc;
    for (int attempt = 0; attempt < kMaxPlacementRetries && !placed; ++attempt) {
      const double s = rng.uniform(cfg.size_min, cfg.size_max);
      class_id = int(rng.uniform_int(0, cfg.classes - 1));
      shape = cfg.classes > 1 ? Shape(class_id % 3)
                              : Shape(int(rng.uniform_int(0, 2)));
      double w = s, h = s;
      if (shape == Shape::kRect) {
        const double ar = rng.uniform(0.6, 1.6);
        w = s * std::sqrt(ar);
        h = s * s / w;
        const double sa = std::sqrt(w * h);
        if (sa < cfg.size_min || sa >= cfg.size_max) { w = s; h = s; }
      }
      const double cx_lo = kEdgeMargin + w / 2.0;
      const double cx_hi = cfg.width - kEdgeMargin - w / 2.0;
      const double cy_lo = kEdgeMargin + h / 2.0;
      const double cy_hi = cfg.height - kEdgeMargin - h / 2.0;
      if (cx_lo >= cx_hi || cy_lo >= cy_hi) continue;  // sample cannot fit
      const double cx = rng.uniform(cx_lo, cx_hi);
      const double cy = rng.uniform(cy_lo, cy_hi);
      box = {cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0, class_id};
      bool overlaps = false;
      for (const auto& other : boxes)
        if (boxes_intersect(box, other)) { overlaps = true; break; }
      if (!overlaps || attempt == kMaxPlacementRetries - 1) {
        placed = true;
        any_overlap = any_overlap || overlaps;
      }
    }
    if (!placed)
      throw PlacementError("could not place object " + std::to_string(i) +
                           " inside a " + std::to_string(cfg.width) + "x" +
                           std::to_string(cfg.height) + " image");

    PlacedObject obj;
    obj.box = box;
    obj.shape = shape;
    const double delta = cfg.contrast * 255.0;
    double bg = ring_mean(img, box);
    double level;
    if (255.0 - bg >= delta) {
      level = bg + delta;
    } else if (bg >= delta) {
      level = bg - delta;
    } else {
      flatten_neighborhood(img, box, 255.0 - delta);
      level = 255.0;
    }
    // Zero-mean tint keeps the channel-mean intensity exactly at `level`.
    double t0 = rng.uniform(-12.0, 12.0);
    double t1 = rng.uniform(-12.0, 12.0);
    double t2 = -(t0 + t1);
    const double lo = std::min({t0, t1, t2}), hi = std::max({t0, t1, t2});
    if (level + lo < 0.0 || level + hi > 255.0) { t0 = t1 = t2 = 0.0; }
    obj.color[0] = level + t0;
    obj.color[1] = level + t1;
    obj.color[2] = level + t2;
    draw_object(img, obj);
    boxes.push_back(box);
    objects.push_back(obj);
  }
  if (overlap_out) *overlap_out = any_overlap;
  return {std::move(img), std::move(boxes)};
}

std::pair<Tensor<float>, std::vector<GroundTruthBox>> generate_scene(
    const SceneConfig& cfg, uint64_t seed) {
  auto [img, boxes] = render_scene(cfg, seed);
  return {image_to_tensor<float>(img), std::move(boxes)};
}

std::filesystem::path write_dataset(const SceneConfig& cfg, int count,
                                    uint64_t seed,
                                    const std::filesystem::path& out_dir) {
  cfg.validate();
  if (count < 0) throw ConfigError("write_dataset: negative count");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw StorageError("cannot create " + (out_dir / "images").string());

  const std::filesystem::path manifest = out_dir / "manifest.jsonl";
  std::ofstream mf(manifest, std::ios::binary | std::ios::trunc);
  if (!mf) throw StorageError("cannot open manifest: " + manifest.string());

  for (int i = 0; i < count; ++i) {
    bool overlap = false;
    auto [img, boxes] = render_scene(cfg, seed + uint64_t(i), &overlap);
    char name[32];
    std::snprintf(name, sizeof(name), "images/img_%06d.ppm", i);
    write_ppm(out_dir / name, img);
    nlohmann::ordered_json rec;
    rec["image"] = name;
    auto jboxes = nlohmann::ordered_json::array();
    auto jclasses = nlohmann::ordered_json::array();
    for (const auto& b : boxes) {
      jboxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
      jclasses.push_back(b.class_id);
    }
    rec["boxes"] = jboxes;
    rec["classes"] = jclasses;
    rec["overlap"] = overlap;
    mf << rec.dump() << "\n";
  }
  mf.close();
  if (!mf) throw StorageError("manifest write failed: " + manifest.string());
  return manifest;
}

std::vector<SceneRecord> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream f(manifest);
  if (!f) throw StorageError("cannot open manifest: " + manifest.string());
  std::vector<SceneRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    SceneRecord rec;
    rec.image = j.at("image").get<std::string>();
    const auto& jb = j.at("boxes");
    const auto& jc = j.at("classes");
    for (size_t i = 0; i < jb.size(); ++i) {
      GroundTruthBox b;
      b.x_min = jb[i][0].get<double>();
      b.y_min = jb[i][1].get<double>();
      b.x_max = jb[i][2].get<double>();
      b.y_max = jb[i][3].get<double>();
      b.class_id = jc[i].get<int>();
      rec.boxes.push_back(b);
    }
    rec.overlap = j.value("overlap", false);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace srtod

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "srtod/synthdata.hpp"

using namespace srtod;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("srtod_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("size_bucket boundaries") {
  CHECK(size_bucket({0, 0, 4, 4, 0}) == SizeBucket::kVeryTiny);   // sqrt-area 4
  CHECK(size_bucket({0, 0, 12, 12, 0}) == SizeBucket::kTiny);     // 12
  CHECK(size_bucket({0, 0, 20, 20, 0}) == SizeBucket::kSmall);    // 20
  CHECK(size_bucket({0, 0, 8, 8, 0}) == SizeBucket::kTiny);     // boundary 8
  CHECK(size_bucket({0, 0, 16, 16, 0}) == SizeBucket::kSmall);  // boundary 16
  CHECK(size_bucket({0, 0, 32, 32, 0}) == SizeBucket::kOther);  // boundary 32
}

TEST_CASE("size_bucket uses sqrt(area), not max side") {
  // 2 x 32 box: sqrt(64) = 8 -> tiny bucket boundary
  CHECK(size_bucket({0, 0, 2, 32, 0}) == SizeBucket::kTiny);
  CHECK_THROWS_AS(size_bucket({5, 5, 5, 9, 0}), ValidationError);
}

TEST_CASE("zero-object config produces empty box list") {
  SceneConfig cfg;
  cfg.objects_min = cfg.objects_max = 0;
  auto [img, boxes] = generate_scene(cfg, 7);
  CHECK(boxes.empty());
  CHECK(img.shape == std::vector<int>({3, 128, 128}));
}

TEST_CASE("identical (cfg, seed) pairs are bit-identical") {
  SceneConfig cfg;
  cfg.background = Background::kTextured;
  auto [img1, boxes1] = generate_scene(cfg, 1234);
  auto [img2, boxes2] = generate_scene(cfg, 1234);
  CHECK(img1.data == img2.data);
  REQUIRE(boxes1.size() == boxes2.size());
  for (size_t i = 0; i < boxes1.size(); ++i) {
    CHECK(boxes1[i].x_min == boxes2[i].x_min);
    CHECK(boxes1[i].y_max == boxes2[i].y_max);
    CHECK(boxes1[i].class_id == boxes2[i].class_id);
  }
  auto [img3, boxes3] = generate_scene(cfg, 1235);
  CHECK(img1.data != img3.data);
}

TEST_CASE("every emitted box respects the configured size range") {
  SceneConfig cfg;
  cfg.size_min = 2.0;
  cfg.size_max = 16.0;
  cfg.objects_min = 1;
  cfg.objects_max = 6;
  for (int s = 0; s < 1000; ++s) {
    auto [img, boxes] = generate_scene(cfg, uint64_t(s));
    for (const auto& b : boxes) {
      CHECK(b.sqrt_area() >= 2.0);
      CHECK(b.sqrt_area() < 16.0);
    }
  }
}

TEST_CASE("boxes lie strictly within image bounds; buckets covered") {
  SceneConfig cfg;  // default size range [2,32)
  cfg.objects_min = 2;
  cfg.objects_max = 8;
  std::set<SizeBucket> seen;
  for (int s = 0; s < 500; ++s) {
    auto [img, boxes] = generate_scene(cfg, 10'000 + uint64_t(s));
    for (const auto& b : boxes) {
      CHECK(b.x_min > 0.0);
      CHECK(b.y_min > 0.0);
      CHECK(b.x_max < double(cfg.width));
      CHECK(b.y_max < double(cfg.height));
      seen.insert(size_bucket(b));
    }
  }
  CHECK(seen.count(SizeBucket::kVeryTiny));
  CHECK(seen.count(SizeBucket::kTiny));
  CHECK(seen.count(SizeBucket::kSmall));
}

TEST_CASE("objects differ from their local background by the contrast") {
  SceneConfig cfg;
  cfg.background = Background::kGradient;
  cfg.contrast = 0.4;
  cfg.objects_min = cfg.objects_max = 4;
  cfg.size_min = 6.0;  // big enough to have interior pixels
  cfg.size_max = 20.0;
  int checked = 0;
  for (int s = 0; s < 20; ++s) {
    auto [imgu8, boxes] = render_scene(cfg, 555 + uint64_t(s));
    for (const auto& b : boxes) {
      // center pixel of the box, when covered by the shape, must differ
      // from the ring mean by at least contrast*255 - small quantization slack
      const int cx = int((b.x_min + b.x_max) / 2);
      const int cy = int((b.y_min + b.y_max) / 2);
      double obj = (double(imgu8.at(cy, cx, 0)) + imgu8.at(cy, cx, 1) +
                    imgu8.at(cy, cx, 2)) / 3.0;
      // ring mean just outside the box
      double acc = 0;
      int n = 0;
      const int x0 = std::max(0, int(b.x_min) - 3), x1 = std::min(cfg.width - 1, int(b.x_max) + 3);
      const int y0 = std::max(0, int(b.y_min) - 3), y1 = std::min(cfg.height - 1, int(b.y_max) + 3);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (x >= b.x_min - 0.5 && x <= b.x_max + 0.5 && y >= b.y_min - 0.5 &&
              y <= b.y_max + 0.5)
            continue;
          acc += (double(imgu8.at(y, x, 0)) + imgu8.at(y, x, 1) + imgu8.at(y, x, 2)) / 3.0;
          ++n;
        }
      if (n == 0) continue;
      // All three shapes cover the box center.
      CHECK(std::abs(obj - acc / n) >= cfg.contrast * 255.0 * 0.8);
      ++checked;
    }
  }
  CHECK(checked > 40);
}

TEST_CASE("invalid configs are rejected") {
  SceneConfig cfg;
  cfg.size_min = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SceneConfig{};
  cfg.contrast = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SceneConfig{};
  cfg.objects_max = cfg.objects_min - 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SceneConfig{};
  cfg.size_max = 200.0;  // cannot fit in 128
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("placement fails after bounded retries when objects cannot fit") {
  SceneConfig cfg;
  cfg.height = cfg.width = 64;
  cfg.size_min = 62.5;  // passes validate (<= 64) but cannot fit with margins
  cfg.size_max = 63.9;
  cfg.objects_min = cfg.objects_max = 1;
  CHECK_THROWS_AS(generate_scene(cfg, 3), PlacementError);
}

TEST_CASE("overlap is allowed after retries and recorded") {
  SceneConfig cfg;
  cfg.height = cfg.width = 64;
  cfg.objects_min = cfg.objects_max = 30;  // force collisions
  cfg.size_min = 12.0;
  cfg.size_max = 20.0;
  bool overlap = false;
  auto [img, boxes] = render_scene(cfg, 99, &overlap);
  CHECK(boxes.size() == 30);
  CHECK(overlap);
}

TEST_CASE("write_dataset: counts, reruns, manifest contents") {
  SceneConfig cfg;
  cfg.objects_min = 1;
  cfg.objects_max = 3;
  auto dir = temp_dir("ds1");

  SUBCASE("count 3 gives 3 records and 3 images") {
    auto manifest = write_dataset(cfg, 3, 42, dir);
    auto records = read_manifest(manifest);
    REQUIRE(records.size() == 3);
    for (const auto& r : records) CHECK(fs::exists(dir / r.image));
    // boxes round-trip exactly through the manifest
    auto [img0, boxes0] = generate_scene(cfg, 42);
    REQUIRE(records[0].boxes.size() == boxes0.size());
    for (size_t i = 0; i < boxes0.size(); ++i) {
      CHECK(records[0].boxes[i].x_min == boxes0[i].x_min);
      CHECK(records[0].boxes[i].class_id == boxes0[i].class_id);
    }
    // written image reloads to the exact generated tensor
    Tensor<float> reload = image_to_tensor<float>(read_ppm(dir / records[0].image));
    CHECK(reload.data == img0.data);
  }

  SUBCASE("count 0 gives an empty manifest and no images") {
    auto manifest = write_dataset(cfg, 0, 42, dir);
    CHECK(read_manifest(manifest).empty());
    CHECK(slurp(manifest).empty());
    CHECK(!fs::exists(dir / "images" / "img_000000.ppm"));
  }

  SUBCASE("rerun with same args is byte-identical") {
    auto m1 = write_dataset(cfg, 5, 7, dir);
    const std::string bytes1 = slurp(m1);
    const std::string img1 = slurp(dir / "images" / "img_000003.ppm");
    auto m2 = write_dataset(cfg, 5, 7, dir);
    CHECK(slurp(m2) == bytes1);
    CHECK(slurp(dir / "images" / "img_000003.ppm") == img1);
  }
}

TEST_CASE("per-image seeds derive as seed + index") {
  SceneConfig cfg;
  auto dir = temp_dir("ds2");
  auto manifest = write_dataset(cfg, 2, 100, dir);
  auto records = read_manifest(manifest);
  auto [img1, boxes1] = generate_scene(cfg, 101);  // seed + 1
  Tensor<float> reload = image_to_tensor<float>(read_ppm(dir / records[1].image));
  CHECK(reload.data == img1.data);
}

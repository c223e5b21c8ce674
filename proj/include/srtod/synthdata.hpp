#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "srtod/boxes.hpp"
#include "srtod/image.hpp"
#include "srtod/rng.hpp"

namespace srtod {

enum class Background { kFlat, kGradient, kNoise, kTextured };

/// Configuration for the synthetic tiny-object scene generator.
struct SceneConfig {
  int height = 128, width = 128;
  int objects_min = 3, objects_max = 8;
  double size_min = 2.0, size_max = 32.0;  // sqrt-area range, half-open [min,max)
  Background background = Background::kGradient;
  double contrast = 0.5;  // object/background intensity gap, fraction of 255
  int classes = 1;

  void validate() const;
};

/// One generated scene record as stored in the dataset manifest.
struct SceneRecord {
  std::string image;  // path relative to the manifest directory
  std::vector<GroundTruthBox> boxes;
  bool overlap = false;  // some object accepted overlapping after retries
};

/// Deterministic scene generation; identical (cfg, seed) pairs produce
/// bit-identical images and boxes. Pixel values are the 8-bit rendering
/// divided by 255, so a written-then-reloaded image reproduces the tensor.
std::pair<Tensor<float>, std::vector<GroundTruthBox>> generate_scene(
    const SceneConfig& cfg, uint64_t seed);

/// Render only (used by generate_scene and tests).
std::pair<ImageU8, std::vector<GroundTruthBox>> render_scene(
    const SceneConfig& cfg, uint64_t seed, bool* overlap_out = nullptr);

/// Writes `count` scenes (per-image seed = seed + index) plus a JSONL
/// manifest with one {image, boxes, classes, overlap} record per line.
/// Returns the manifest path. Re-running with the same arguments
/// reproduces identical manifest bytes.
std::filesystem::path write_dataset(const SceneConfig& cfg, int count,
                                    uint64_t seed,
                                    const std::filesystem::path& out_dir);

/// Parses a manifest back into records (paths stay relative).
std::vector<SceneRecord> read_manifest(const std::filesystem::path& manifest);

}  // namespace srtod

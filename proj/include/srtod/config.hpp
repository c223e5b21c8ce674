#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "srtod/model.hpp"
#include "srtod/synthdata.hpp"

namespace srtod {

struct OptimConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  int checkpoint_every = 5;  // epochs
  int threads = 0;           // 0 = hardware concurrency
};

struct DatasetConfig {
  std::string train_manifest;
  std::string val_manifest;
  int count = 500;      // written by gendata
  int val_count = 100;  // written by gendata (val split)
};

/// Complete run configuration. Round-trips losslessly through its JSON
/// file format; unknown keys are rejected.
struct RunConfig {
  uint64_t seed = 42;
  std::string pipeline = "srtod";  // or "baseline"
  std::string out_dir = "runs/default";
  SceneConfig scene;
  DatasetConfig dataset;
  BackboneConfig backbone;
  ReconSource recon_source = ReconSource::kP2;
  double lambda = 1.0;
  bool detach_recon = false;
  DiffFlavor diff_flavor = DiffFlavor::kPixel;
  HighPassConfig highpass;
  DgfeConfig dgfe;
  AnchorConfig anchors;
  int num_classes = 1;
  int tower_depth = 4;
  OptimConfig optim;
  TrainConfig train;

  void validate() const;
  ModelConfig model_config() const;
  PipelineMode pipeline_mode() const;

  /// Canonical JSON text (deterministic key order and formatting).
  std::string to_json_text() const;
  static RunConfig from_json_text(const std::string& text);

  void save(const std::filesystem::path& path) const;
  static RunConfig load(const std::filesystem::path& path);

  /// FNV-1a hash of the canonical JSON, stored in checkpoints.
  uint64_t hash() const;
};

}  // namespace srtod

#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include "srtod/checkpoint.hpp"
#include "srtod/config.hpp"
#include "srtod/evaluation.hpp"
#include "srtod/model.hpp"

namespace srtod {

/// Per-step loss components; total = cls + box + lambda * recon.
struct LossReport {
  double cls_loss = 0;
  double box_loss = 0;
  double recon_loss = 0;
  double total = 0;
};

struct Sample {
  Tensor<float> image;
  std::vector<GroundTruthBox> gts;
};

/// Loads images + boxes referenced by a dataset manifest.
std::vector<Sample> load_samples(const std::filesystem::path& manifest);

/// Deterministic index-ordered parallel map over [0, n).
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

/// Training driver: owns the model, optimizer state, metrics log and
/// checkpoints for one run configuration.
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);

  /// One SGD update over a batch; returns the pre-update losses.
  /// Throws TrainingError on a non-finite loss.
  LossReport training_step(const std::vector<const Sample*>& batch);

  /// Full training loop over the configured dataset; writes metrics.jsonl
  /// and periodic checkpoints, returns the final checkpoint path.
  std::filesystem::path fit(const std::filesystem::path& resume = {});

  Model<float>& model() { return model_; }
  const RunConfig& config() const { return cfg_; }
  int64_t step() const { return step_; }

 private:
  void merge_norm_stats(const std::vector<NormStatsSink<float>>& sinks);

  RunConfig cfg_;
  Model<float> model_;
  int64_t step_ = 0;
  int threads_ = 1;
};

/// Runs inference over a sample set and scores it.
APReport evaluate_model(const Model<float>& model, const std::vector<Sample>& samples,
                        PipelineMode mode, int num_classes, int threads);

/// Mean reconstruction MSE over a sample set (srtod forward).
double mean_recon_mse(const Model<float>& model, const std::vector<Sample>& samples,
                      int threads);

/// Per-image difference-map statistic: mean D over ground-truth object
/// pixels minus mean D over background pixels (positive = correlated).
double diff_object_background_gap(const Tensor<float>& diff,
                                  const std::vector<GroundTruthBox>& gts);

/// Writes the six visualization files for one image:
/// <stem>_original / _reconstruction / _diff_pixel / _diff_highfreq /
/// _binary_map / _detections, all .ppm.
std::vector<std::filesystem::path> visualize_image(
    const Model<float>& model, const Tensor<float>& image,
    const std::filesystem::path& out_dir, const std::string& stem);

int resolve_threads(int configured);

}  // namespace srtod

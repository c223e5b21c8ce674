#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "srtod/trainer.hpp"

using namespace srtod;

namespace {

std::filesystem::path train_manifest_path(const RunConfig& cfg) {
  if (!cfg.dataset.train_manifest.empty()) return cfg.dataset.train_manifest;
  return std::filesystem::path(cfg.out_dir) / "data" / "train" / "manifest.jsonl";
}

std::filesystem::path val_manifest_path(const RunConfig& cfg) {
  if (!cfg.dataset.val_manifest.empty()) return cfg.dataset.val_manifest;
  return std::filesystem::path(cfg.out_dir) / "data" / "val" / "manifest.jsonl";
}

RunConfig load_config(const std::string& path, uint64_t* seed_override,
                      std::string* out_override) {
  RunConfig cfg = RunConfig::load(path);
  if (seed_override) cfg.seed = *seed_override;
  if (out_override) cfg.out_dir = *out_override;
  cfg.validate();
  return cfg;
}

int cmd_gendata(const RunConfig& cfg) {
  const auto train_m = train_manifest_path(cfg);
  const auto val_m = val_manifest_path(cfg);
  auto p1 = write_dataset(cfg.scene, cfg.dataset.count, cfg.seed,
                          train_m.parent_path());
  std::cout << p1.string() << "\n";
  if (cfg.dataset.val_count > 0) {
    const uint64_t val_seed = Rng::derive(cfg.seed, "valdata").next_u64();
    auto p2 = write_dataset(cfg.scene, cfg.dataset.val_count, val_seed,
                            val_m.parent_path());
    std::cout << p2.string() << "\n";
  }
  return 0;
}

int cmd_train(RunConfig cfg, const std::string& resume) {
  cfg.dataset.train_manifest = train_manifest_path(cfg).string();
  Trainer trainer(cfg);
  const auto ckpt = trainer.fit(resume.empty() ? std::filesystem::path()
                                               : std::filesystem::path(resume));
  std::cout << ckpt.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
             const std::string& dataset) {
  Model<float> model(cfg.seed, cfg.model_config());
  bool mismatch = false;
  load_checkpoint(checkpoint, model.params(), cfg.hash(), &mismatch);
  if (mismatch)
    fprintf(stderr, "warning: checkpoint config hash differs from this run's config\n");
  const auto manifest = dataset.empty() ? val_manifest_path(cfg)
                                        : std::filesystem::path(dataset);
  auto samples = load_samples(manifest);
  if (samples.empty()) throw StorageError("evaluation dataset is empty: " + manifest.string());
  APReport rep = evaluate_model(model, samples, cfg.pipeline_mode(),
                                cfg.num_classes, cfg.train.threads);
  std::cout << rep.to_string();
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  std::ofstream rf(std::filesystem::path(cfg.out_dir) / "eval_report.txt");
  rf << rep.to_string();
  write_pr_csv(rep, (std::filesystem::path(cfg.out_dir) / "pr_curves.csv").string());
  return 0;
}

int cmd_visualize(const RunConfig& cfg, const std::string& checkpoint,
                  const std::string& image_path) {
  Model<float> model(cfg.seed, cfg.model_config());
  bool mismatch = false;
  load_checkpoint(checkpoint, model.params(), cfg.hash(), &mismatch);
  if (mismatch)
    fprintf(stderr, "warning: checkpoint config hash differs from this run's config\n");
  Tensor<float> img = image_to_tensor<float>(read_ppm(image_path));
  const std::string stem = std::filesystem::path(image_path).stem().string();
  auto files = visualize_image(model, img, std::filesystem::path(cfg.out_dir) / "viz", stem);
  for (const auto& f : files) std::cout << f.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SR-TOD: tiny object detection with image self-reconstruction"};
  app.require_subcommand(1);

  std::string config_path, resume, checkpoint, dataset, image_path, out_dir;
  uint64_t seed = 0;
  bool have_seed = false, have_out = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run config (JSON)")->required();
    sub->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
      have_seed = true;
    });
    sub->add_option("--out", out_dir, "output directory override")
        ->each([&](const std::string&) { have_out = true; });
  };

  CLI::App* gen = app.add_subcommand("gendata", "generate a synthetic dataset");
  add_common(gen);
  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--resume", resume, "checkpoint to resume from");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  eval->add_option("--dataset", dataset, "manifest override");
  CLI::App* viz = app.add_subcommand("visualize", "export reconstruction and difference maps");
  add_common(viz);
  viz->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  viz->add_option("--image", image_path, "input image (PPM)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_config(config_path, have_seed ? &seed : nullptr,
                                have_out ? &out_dir : nullptr);
    if (gen->parsed()) return cmd_gendata(cfg);
    if (train->parsed()) return cmd_train(cfg, resume);
    if (eval->parsed()) return cmd_eval(cfg, checkpoint, dataset);
    if (viz->parsed()) return cmd_visualize(cfg, checkpoint, image_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

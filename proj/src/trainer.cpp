#include "srtod/trainer.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <thread>

namespace srtod {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kFocalAlpha = 0.25;
constexpr double kFocalGamma = 2.0;
constexpr double kBnMomentum = 0.1;

struct ImageResult {
  LossReport losses;
  std::vector<Tensor<float>> grads;  // aligned with ParamStore order
  NormStatsSink<float> sink;
};

/// Forward + losses + backward for a single image; grads per parameter.
ImageResult image_step(const Model<float>& model, const Sample& sample,
                       PipelineMode mode) {
  const ModelConfig& mc = model.config();
  Graph<float> g;
  Var<float> img{&g, g.leaf(sample.image)};
  ImageResult res;
  Model<float>::Forward fw = model.run(g, img, mode, /*training=*/true, &res.sink);

  // Anchors across all detection levels, assigned jointly.
  std::vector<GroundTruthBox> all_anchors;
  std::vector<std::pair<int, int>> level_dims;
  for (size_t li = 0; li < fw.heads.size(); ++li) {
    const Tensor<float>& cls = g.val(fw.heads[li].first.id);
    const int h = cls.dim(1), w = cls.dim(2);
    level_dims.emplace_back(h, w);
    auto anchors = make_anchors(fw.strides[li], h, w, mc.anchors.scale);
    all_anchors.insert(all_anchors.end(), anchors.begin(), anchors.end());
  }
  AssignResult assign = assign_targets(all_anchors, sample.gts,
                                       mc.anchors.pos_iou, mc.anchors.neg_iou);
  const float norm = float(std::max(1, assign.num_pos));

  Var<float> cls_total{&g, -1}, box_total{&g, -1};
  size_t base = 0;
  const int K = mc.num_classes;
  for (size_t li = 0; li < fw.heads.size(); ++li) {
    const auto [h, w] = level_dims[li];
    Tensor<float> cls_tgt({K, h, w});
    Tensor<float> cls_wgt({K, h, w}, 1.0f);
    Tensor<float> box_tgt({4, h, w});
    Tensor<float> box_wgt({4, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const size_t a = base + size_t(y) * w + size_t(x);
        if (assign.labels[a] == -1) {
          for (int k = 0; k < K; ++k) cls_wgt.at(k, y, x) = 0.0f;
        } else if (assign.labels[a] == 1) {
          const int cid = sample.gts[size_t(assign.matched_gt[a])].class_id;
          cls_tgt.at(cid, y, x) = 1.0f;
          for (int c4 = 0; c4 < 4; ++c4) {
            box_tgt.at(c4, y, x) = float(assign.box_targets[a][size_t(c4)]);
            box_wgt.at(c4, y, x) = 1.0f;
          }
        }
      }
    Var<float> cls_l = sigmoid_focal_loss(fw.heads[li].first, cls_tgt, cls_wgt,
                                          float(kFocalAlpha), float(kFocalGamma), norm);
    Var<float> box_l = l1_loss_masked(fw.heads[li].second, box_tgt, box_wgt, norm);
    cls_total = cls_total.id < 0 ? cls_l : add(cls_total, cls_l);
    box_total = box_total.id < 0 ? box_l : add(box_total, box_l);
    base += size_t(h) * size_t(w);
  }

  Var<float> total = add(cls_total, box_total);
  res.losses.cls_loss = double(g.val(cls_total.id).data[0]);
  res.losses.box_loss = double(g.val(box_total.id).data[0]);
  if (mode == PipelineMode::kSrtod) {
    Var<float> rl = recon_loss(fw.recon, img);
    res.losses.recon_loss = double(g.val(rl.id).data[0]);
    total = add(total, mul_scalar(rl, float(mc.lambda)));
  }
  res.losses.total = res.losses.cls_loss + res.losses.box_loss +
                     mc.lambda * res.losses.recon_loss;

  g.backward(total.id);
  const auto& params = model.params().all();
  res.grads.reserve(params.size());
  for (const auto& p : params) {
    const int id = g.find_leaf(&p->value);
    res.grads.push_back(id >= 0 ? g.grad_of(id) : Tensor<float>(p->value.shape));
  }
  return res;
}

}  // namespace

int resolve_threads(int configured) {
  if (configured > 0) return configured;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::min(std::max(1, threads), std::max(1, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  for (auto& th : pool) th.join();
}

std::vector<Sample> load_samples(const std::filesystem::path& manifest) {
  const auto records = read_manifest(manifest);
  const auto dir = manifest.parent_path();
  std::vector<Sample> samples;
  samples.reserve(records.size());
  for (const auto& rec : records) {
    Sample s;
    s.image = image_to_tensor<float>(read_ppm(dir / rec.image));
    s.gts = rec.boxes;
    samples.push_back(std::move(s));
  }
  return samples;
}

Trainer::Trainer(const RunConfig& cfg)
    : cfg_(cfg), model_(cfg.seed, cfg.model_config()) {
  cfg_.validate();
  threads_ = resolve_threads(cfg.train.threads);
}

LossReport Trainer::training_step(const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw TrainingError("empty batch");
  const PipelineMode mode = cfg_.pipeline_mode();
  std::vector<ImageResult> results(batch.size());
  parallel_for(int(batch.size()), threads_, [&](int i) {
    results[size_t(i)] = image_step(model_, *batch[size_t(i)], mode);
  });

  LossReport report;
  for (const auto& r : results) {
    report.cls_loss += r.losses.cls_loss;
    report.box_loss += r.losses.box_loss;
    report.recon_loss += r.losses.recon_loss;
  }
  const double inv = 1.0 / double(batch.size());
  report.cls_loss *= inv;
  report.box_loss *= inv;
  report.recon_loss *= inv;
  report.total = report.cls_loss + report.box_loss + cfg_.lambda * report.recon_loss;
  if (!std::isfinite(report.total))
    throw TrainingError("non-finite loss at step " + std::to_string(step_) +
                        " (cls=" + std::to_string(report.cls_loss) +
                        " box=" + std::to_string(report.box_loss) +
                        " recon=" + std::to_string(report.recon_loss) + ")");

  // SGD with momentum; gradients averaged over the batch in image order.
  const auto& params = model_.params().all();
  const float lr = float(cfg_.optim.lr);
  const float mu = float(cfg_.optim.momentum);
  const float wd = float(cfg_.optim.weight_decay);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param<float>* p = params[pi].get();
    if (!p->trainable) continue;
    const size_t n = p->value.data.size();
    for (size_t i = 0; i < n; ++i) {
      float grad = 0.0f;
      for (const auto& r : results) grad += r.grads[pi].data[i];
      grad = grad * float(inv);
      if (p->decay) grad += wd * p->value.data[i];
      p->momentum.data[i] = mu * p->momentum.data[i] + grad;
      p->value.data[i] -= lr * p->momentum.data[i];
    }
  }
  model_.post_update();

  if (model_.config().backbone.norm == NormKind::kBatch) {
    std::vector<NormStatsSink<float>> sinks;
    for (auto& r : results) sinks.push_back(std::move(r.sink));
    merge_norm_stats(sinks);
  }
  ++step_;
  return report;
}

void Trainer::merge_norm_stats(const std::vector<NormStatsSink<float>>& sinks) {
  // Aggregate per layer in first-seen order (deterministic across runs).
  std::vector<Param<float>*> order;
  std::unordered_map<Param<float>*, std::pair<std::vector<double>, std::vector<double>>> acc;
  int images = 0;
  for (const auto& sink : sinks) {
    ++images;
    for (const auto& [key, stats] : sink) {
      auto it = acc.find(key);
      if (it == acc.end()) {
        order.push_back(key);
        it = acc.emplace(key, std::make_pair(std::vector<double>(stats.mean.size(), 0.0),
                                             std::vector<double>(stats.mean.size(), 0.0)))
                 .first;
      }
      for (size_t c = 0; c < stats.mean.size(); ++c) {
        it->second.first[c] += double(stats.mean[c]);
        it->second.second[c] += double(stats.mean_sq[c]);
      }
    }
  }
  if (images == 0) return;
  for (Param<float>* run_mean : order) {
    Param<float>* run_var = model_.params().find(
        run_mean->name.substr(0, run_mean->name.size() - 8) + "run_var");
    const auto& [msum, sqsum] = acc[run_mean];
    for (size_t c = 0; c < msum.size(); ++c) {
      const double mean = msum[c] / images;
      const double var = std::max(0.0, sqsum[c] / images - mean * mean);
      run_mean->value.data[c] =
          float((1.0 - kBnMomentum) * run_mean->value.data[c] + kBnMomentum * mean);
      run_var->value.data[c] =
          float((1.0 - kBnMomentum) * run_var->value.data[c] + kBnMomentum * var);
    }
  }
}

std::filesystem::path Trainer::fit(const std::filesystem::path& resume) {
  const std::filesystem::path out_dir(cfg_.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw StorageError("cannot create out_dir " + out_dir.string());

  if (!resume.empty()) {
    bool mismatch = false;
    step_ = load_checkpoint(resume, model_.params(), cfg_.hash(), &mismatch);
    if (mismatch)
      fprintf(stderr, "warning: checkpoint config hash differs from this run's config\n");
  }

  auto samples = load_samples(cfg_.dataset.train_manifest);
  if (samples.empty()) throw TrainingError("training dataset is empty");
  const int B = cfg_.train.batch_size;
  const int steps_per_epoch = int((samples.size() + size_t(B) - 1) / size_t(B));

  std::ofstream metrics(out_dir / "metrics.jsonl",
                        resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw StorageError("cannot open metrics log");
  {
    ordered_json head;
    head["event"] = "config";
    head["pipeline"] = cfg_.pipeline;
    head["config_hash"] = cfg_.hash();
    head["config"] = nlohmann::ordered_json::parse(cfg_.to_json_text());
    metrics << head.dump() << "\n";
  }

  const int start_epoch = int(step_ / steps_per_epoch);
  for (int epoch = start_epoch; epoch < cfg_.train.epochs; ++epoch) {
    // Per-epoch derived shuffle keeps resumed runs on the original schedule.
    Rng rng = Rng::derive(cfg_.seed, "epoch/" + std::to_string(epoch));
    std::vector<int> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(rng.uniform_int(0, int64_t(i) - 1))]);

    for (size_t start = 0; start < order.size(); start += size_t(B)) {
      std::vector<const Sample*> batch;
      for (size_t k = start; k < std::min(order.size(), start + size_t(B)); ++k)
        batch.push_back(&samples[size_t(order[k])]);
      LossReport rep;
      try {
        rep = training_step(batch);
      } catch (const TrainingError& e) {
        ordered_json line;
        line["event"] = "abort";
        line["step"] = step_;
        line["error"] = e.what();
        metrics << line.dump() << "\n";
        throw;
      }
      ordered_json line;
      line["step"] = step_ - 1;
      line["epoch"] = epoch;
      line["cls"] = rep.cls_loss;
      line["box"] = rep.box_loss;
      line["recon"] = rep.recon_loss;
      line["total"] = rep.total;
      metrics << line.dump() << "\n";
    }
    if (cfg_.train.checkpoint_every > 0 &&
        (epoch + 1) % cfg_.train.checkpoint_every == 0 &&
        epoch + 1 < cfg_.train.epochs) {
      save_checkpoint(out_dir / ("ckpt_epoch" + std::to_string(epoch + 1) + ".bin"),
                      model_.params(), cfg_.hash(), step_);
    }
  }
  const std::filesystem::path final_path = out_dir / "checkpoint_final.bin";
  save_checkpoint(final_path, model_.params(), cfg_.hash(), step_);
  return final_path;
}

APReport evaluate_model(const Model<float>& model, const std::vector<Sample>& samples,
                        PipelineMode mode, int num_classes, int threads) {
  std::vector<ImageEval> evals(samples.size());
  parallel_for(int(samples.size()), resolve_threads(threads), [&](int i) {
    evals[size_t(i)].dets = model.detect(samples[size_t(i)].image, mode);
    evals[size_t(i)].gts = samples[size_t(i)].gts;
  });
  return compute_ap(evals, num_classes);
}

double mean_recon_mse(const Model<float>& model, const std::vector<Sample>& samples,
                      int threads) {
  std::vector<double> mse(samples.size(), 0.0);
  parallel_for(int(samples.size()), resolve_threads(threads), [&](int i) {
    auto [recon, diff] = model.reconstruct_and_diff(samples[size_t(i)].image);
    const Tensor<float>& io = samples[size_t(i)].image;
    double acc = 0.0;
    for (size_t k = 0; k < io.data.size(); ++k) {
      const double d = double(recon.data[k]) - double(io.data[k]);
      acc += d * d;
    }
    mse[size_t(i)] = acc / double(io.numel());
  });
  double total = 0.0;
  for (double v : mse) total += v;
  return samples.empty() ? 0.0 : total / double(samples.size());
}

double diff_object_background_gap(const Tensor<float>& diff,
                                  const std::vector<GroundTruthBox>& gts) {
  const int H = diff.dim(1), W = diff.dim(2);
  std::vector<uint8_t> is_obj(size_t(H) * W, 0);
  for (const auto& b : gts) {
    const int x0 = std::max(0, int(std::floor(b.x_min)));
    const int y0 = std::max(0, int(std::floor(b.y_min)));
    const int x1 = std::min(W - 1, int(std::ceil(b.x_max)) - 1);
    const int y1 = std::min(H - 1, int(std::ceil(b.y_max)) - 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) is_obj[size_t(y) * W + size_t(x)] = 1;
  }
  double obj_sum = 0.0, bg_sum = 0.0;
  int64_t obj_n = 0, bg_n = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double v = double(diff.at(0, y, x));
      if (is_obj[size_t(y) * W + size_t(x)]) {
        obj_sum += v;
        ++obj_n;
      } else {
        bg_sum += v;
        ++bg_n;
      }
    }
  if (obj_n == 0 || bg_n == 0) return 0.0;
  return obj_sum / double(obj_n) - bg_sum / double(bg_n);
}

std::vector<std::filesystem::path> visualize_image(
    const Model<float>& model, const Tensor<float>& image,
    const std::filesystem::path& out_dir, const std::string& stem) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw StorageError("cannot create " + out_dir.string());

  auto [recon, diff_used] = model.reconstruct_and_diff(image);
  (void)diff_used;
  DifferenceMap<float> pd = pixel_diff(recon, image);
  DifferenceMap<float> hd = highfreq_diff(recon, image, model.config().highpass);
  const float t = model.dgfe().threshold_param()->value.data[0];

  ImageU8 original = tensor_to_image(image);
  ImageU8 overlay = original;
  const int H = image.dim(1), W = image.dim(2);
  const DifferenceMap<float>& active =
      model.config().diff_flavor == DiffFlavor::kPixel ? pd : hd;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (active.data.at(0, y, x) > t) {
        overlay.at(y, x, 0) = 255;
        overlay.at(y, x, 1) = overlay.at(y, x, 1) / 3;
        overlay.at(y, x, 2) = overlay.at(y, x, 2) / 3;
      }

  ImageU8 detimg = original;
  auto draw_box = [&detimg, H, W](const GroundTruthBox& b) {
    const int x0 = std::clamp(int(std::floor(b.x_min)), 0, W - 1);
    const int y0 = std::clamp(int(std::floor(b.y_min)), 0, H - 1);
    const int x1 = std::clamp(int(std::ceil(b.x_max)) - 1, 0, W - 1);
    const int y1 = std::clamp(int(std::ceil(b.y_max)) - 1, 0, H - 1);
    for (int x = x0; x <= x1; ++x) {
      detimg.at(y0, x, 1) = 255;
      detimg.at(y1, x, 1) = 255;
    }
    for (int y = y0; y <= y1; ++y) {
      detimg.at(y, x0, 1) = 255;
      detimg.at(y, x1, 1) = 255;
    }
  };
  for (const auto& d : model.detect(image, PipelineMode::kSrtod))
    if (d.score > 0.3) draw_box(d.box());

  std::vector<std::filesystem::path> files = {
      out_dir / (stem + "_original.ppm"),
      out_dir / (stem + "_reconstruction.ppm"),
      out_dir / (stem + "_diff_pixel.ppm"),
      out_dir / (stem + "_diff_highfreq.ppm"),
      out_dir / (stem + "_binary_map.ppm"),
      out_dir / (stem + "_detections.ppm"),
  };
  write_ppm(files[0], original);
  write_ppm(files[1], tensor_to_image(recon));
  write_ppm(files[2], heatmap_u8(pd.data));
  write_ppm(files[3], heatmap_u8(hd.data));
  write_ppm(files[4], overlay);
  write_ppm(files[5], detimg);
  return files;
}

}  // namespace srtod

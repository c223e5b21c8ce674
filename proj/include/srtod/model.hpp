#pragma once

#include "srtod/detector.hpp"
#include "srtod/dgfe.hpp"
#include "srtod/diffmap.hpp"
#include "srtod/recon_head.hpp"

namespace srtod {

enum class PipelineMode { kBaseline, kSrtod };

struct ModelConfig {
  BackboneConfig backbone;
  ReconSource recon_source = ReconSource::kP2;
  bool detach_recon = false;  // stop recon-loss gradient at the source level
  DiffFlavor diff_flavor = DiffFlavor::kPixel;
  HighPassConfig highpass;
  DgfeConfig dgfe;
  AnchorConfig anchors;
  int num_classes = 1;
  int tower_depth = 4;
  double lambda = 1.0;  // reconstruction loss weight

  void validate() const {
    backbone.validate();
    highpass.validate();
    dgfe.validate();
    anchors.validate();
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  }
};

/// The full pipeline: backbone+FPN, self-reconstruction head, difference
/// map, DGFE, and the shared detection head over the (enhanced) pyramid.
/// Both pipeline modes share one parameter set; baseline simply routes the
/// raw pyramid to the detection head.
template <typename T>
class Model {
 public:
  Model(uint64_t init_seed, const ModelConfig& cfg)
      : cfg_(cfg),
        store_(init_seed),
        backbone_(store_, cfg.backbone),
        recon_(store_, cfg.backbone.channels, cfg.recon_source),
        dgfe_(store_, cfg.backbone.channels, cfg.dgfe),
        head_(store_, cfg.backbone.channels, cfg.num_classes, cfg.tower_depth) {
    cfg.validate();
  }

  struct Forward {
    FeaturePyramid<T> pyramid;
    std::vector<int> strides;                       // detection levels
    std::vector<std::pair<Var<T>, Var<T>>> heads;   // (cls, box) per level
    Var<T> recon{nullptr, -1};                      // set in srtod mode
    Var<T> diff{nullptr, -1};
  };

  Forward run(Graph<T>& g, Var<T> image, PipelineMode mode, bool training,
              NormStatsSink<T>* sink = nullptr) const {
    Forward out;
    out.pyramid = backbone_.extract_pyramid(g, image, training, sink);
    const bool from_p2 = cfg_.recon_source == ReconSource::kP2;
    Var<T> finest = from_p2 ? out.pyramid.p2 : out.pyramid.p3;

    if (mode == PipelineMode::kSrtod) {
      Var<T> src = cfg_.detach_recon ? stop_grad(finest) : finest;
      out.recon = recon_.reconstruct(g, src);
      out.diff = cfg_.diff_flavor == DiffFlavor::kPixel
                     ? pixel_diff_op(out.recon, image)
                     : highfreq_diff_op(out.recon, image, cfg_.highpass);
      finest = dgfe_.apply(g, finest, out.diff, diff_factor());
    }

    std::vector<Var<T>> levels;
    if (from_p2) {
      levels = {finest, out.pyramid.p3, out.pyramid.p4, out.pyramid.p5, out.pyramid.p6};
      out.strides = {4, 8, 16, 32, 64};
    } else {
      levels = {finest, out.pyramid.p4, out.pyramid.p5, out.pyramid.p6};
      out.strides = {8, 16, 32, 64};
    }
    for (Var<T> lvl : levels) out.heads.push_back(head_.forward(g, lvl));
    return out;
  }

  /// Full inference: forward, score threshold, per-level top-k, decode,
  /// clip to the image, class-wise NMS.
  std::vector<Detection> detect(const Tensor<T>& image, PipelineMode mode) const {
    Graph<T> g;
    Var<T> img{&g, g.leaf(image)};
    Forward fw = run(g, img, mode, /*training=*/false);
    const int H = image.dim(1), W = image.dim(2);
    const AnchorConfig& ac = cfg_.anchors;

    std::vector<Detection> cands;
    for (size_t li = 0; li < fw.heads.size(); ++li) {
      const Tensor<T>& cls = g.val(fw.heads[li].first.id);
      const Tensor<T>& box = g.val(fw.heads[li].second.id);
      const int K = cls.dim(0), h = cls.dim(1), w = cls.dim(2);
      auto anchors = make_anchors(fw.strides[li], h, w, ac.scale);
      std::vector<Detection> level;
      for (int k = 0; k < K; ++k)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double logit = double(cls.at(k, y, x));
            const double score = 1.0 / (1.0 + std::exp(-logit));
            if (score < ac.score_thresh) continue;
            const size_t a = size_t(y) * w + size_t(x);
            std::array<double, 4> d = {double(box.at(0, y, x)), double(box.at(1, y, x)),
                                       double(box.at(2, y, x)), double(box.at(3, y, x))};
            GroundTruthBox bb = decode_box(d, anchors[a]);
            bb.x_min = std::clamp(bb.x_min, 0.0, double(W));
            bb.y_min = std::clamp(bb.y_min, 0.0, double(H));
            bb.x_max = std::clamp(bb.x_max, 0.0, double(W));
            bb.y_max = std::clamp(bb.y_max, 0.0, double(H));
            if (!bb.valid()) continue;
            level.push_back({bb.x_min, bb.y_min, bb.x_max, bb.y_max, k, score});
          }
      if (int(level.size()) > ac.pre_nms_topk) {
        std::stable_sort(level.begin(), level.end(),
                         [](const Detection& a, const Detection& b) { return a.score > b.score; });
        level.resize(size_t(ac.pre_nms_topk));
      }
      cands.insert(cands.end(), level.begin(), level.end());
    }
    std::vector<Detection> kept = nms(std::move(cands), ac.nms_iou);
    if (int(kept.size()) > ac.max_dets) kept.resize(size_t(ac.max_dets));
    return kept;
  }

  /// Reconstruction and difference map for one image (analysis path).
  std::pair<Tensor<T>, Tensor<T>> reconstruct_and_diff(const Tensor<T>& image) const {
    Graph<T> g;
    Var<T> img{&g, g.leaf(image)};
    Forward fw = run(g, img, PipelineMode::kSrtod, /*training=*/false);
    return {g.val(fw.recon.id), g.val(fw.diff.id)};
  }

  /// Resize factor between the difference map and the enhanced level.
  int diff_factor() const { return cfg_.recon_source == ReconSource::kP2 ? 4 : 8; }

  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const ReconHead<T>& recon_head() const { return recon_; }
  const Dgfe<T>& dgfe() const { return dgfe_; }
  const DetectHead<T>& head() const { return head_; }

  /// Post-optimizer hook: the learnable threshold stays in [0,1].
  void post_update() { dgfe_.threshold_param()->clamp(T(0), T(1)); }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  Backbone<T> backbone_;
  ReconHead<T> recon_;
  Dgfe<T> dgfe_;
  DetectHead<T> head_;
};

}  // namespace srtod

#pragma once

#include <array>
#include <cstdint>

#include "srtod/backbone.hpp"
#include "srtod/boxes.hpp"

namespace srtod {

/// Anchor layout: one square anchor per location, edge = scale * stride,
/// centered on the cell.
struct AnchorConfig {
  double scale = 2.0;
  double pos_iou = 0.5;
  double neg_iou = 0.4;
  double score_thresh = 0.05;
  double nms_iou = 0.5;
  int pre_nms_topk = 400;  // per level
  int max_dets = 100;

  void validate() const {
    if (scale <= 0) throw ConfigError("anchor scale must be positive");
    if (neg_iou > pos_iou) throw ConfigError("neg_iou must not exceed pos_iou");
  }
};

/// Anchors for one pyramid level in row-major (y,x) order.
std::vector<GroundTruthBox> make_anchors(int stride, int h, int w, double scale);

/// Per-anchor assignment produced by max-IoU matching.
struct AssignResult {
  std::vector<int8_t> labels;                    // 1 pos, 0 neg, -1 ignore
  std::vector<int> matched_gt;                   // gt index or -1
  std::vector<std::array<double, 4>> box_targets;  // valid for positives
  int num_pos = 0;
};

/// Max-IoU assignment: IoU >= pos_iou -> positive for the argmax gt,
/// IoU < neg_iou -> negative, in between ignored; additionally every gt is
/// force-matched to its best anchor.
AssignResult assign_targets(const std::vector<GroundTruthBox>& anchors,
                            const std::vector<GroundTruthBox>& gts,
                            double pos_iou = 0.5, double neg_iou = 0.4);

/// (dx, dy, dw, dh) regression encoding relative to an anchor.
std::array<double, 4> encode_box(const GroundTruthBox& gt, const GroundTruthBox& anchor);
GroundTruthBox decode_box(const std::array<double, 4>& deltas,
                          const GroundTruthBox& anchor);

/// Greedy per-class NMS; input order defines tie-breaking, output sorted by
/// descending score. No same-class pair in the result has IoU above `thr`.
std::vector<Detection> nms(std::vector<Detection> dets, double thr);

/// Shared-tower detection head: `depth` 3x3 convs with ReLU, then parallel
/// classification (K logits) and box regression (4 deltas) convs.
template <typename T>
class DetectHead {
 public:
  DetectHead(ParamStore<T>& store, int channels, int num_classes, int depth = 4)
      : num_classes_(num_classes) {
    if (num_classes < 1) throw ConfigError("detector needs at least one class");
    for (int i = 0; i < depth; ++i)
      tower_.push_back(ConvLayer<T>::make(store, "head.tower" + std::to_string(i + 1),
                                          channels, channels, 3, 1, 1));
    cls_ = ConvLayer<T>::make(store, "head.cls", channels, num_classes, 3, 1, 1);
    box_ = ConvLayer<T>::make(store, "head.box", channels, 4, 3, 1, 1);
    // Focal-loss prior: start every anchor near background.
    const double prior = 0.01;
    for (auto& v : cls_.b->value.data) v = T(-std::log((1.0 - prior) / prior));
  }

  /// feat {C,h,w} -> (cls logits {K,h,w}, box deltas {4,h,w}).
  std::pair<Var<T>, Var<T>> forward(Graph<T>& g, Var<T> feat) const {
    Var<T> x = feat;
    for (const auto& cv : tower_) x = relu(cv.apply(g, x));
    return {cls_.apply(g, x), box_.apply(g, x)};
  }

  int num_classes() const { return num_classes_; }

 private:
  int num_classes_;
  std::vector<ConvLayer<T>> tower_;
  ConvLayer<T> cls_, box_;
};

}  // namespace srtod

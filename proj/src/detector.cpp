#include "srtod/detector.hpp"

#include <algorithm>
#include <cmath>

namespace srtod {

std::vector<GroundTruthBox> make_anchors(int stride, int h, int w, double scale) {
  std::vector<GroundTruthBox> anchors;
  anchors.reserve(size_t(h) * w);
  const double edge = scale * stride;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double cx = (x + 0.5) * stride;
      const double cy = (y + 0.5) * stride;
      anchors.push_back({cx - edge / 2, cy - edge / 2, cx + edge / 2, cy + edge / 2, 0});
    }
  return anchors;
}

AssignResult assign_targets(const std::vector<GroundTruthBox>& anchors,
                            const std::vector<GroundTruthBox>& gts,
                            double pos_iou, double neg_iou) {
  const size_t na = anchors.size(), ng = gts.size();
  AssignResult res;
  res.labels.assign(na, 0);
  res.matched_gt.assign(na, -1);
  res.box_targets.assign(na, {0, 0, 0, 0});
  if (ng == 0) return res;

  std::vector<double> best_gt_iou(ng, 0.0);
  std::vector<int> best_gt_anchor(ng, -1);
  for (size_t a = 0; a < na; ++a) {
    double best = 0.0;
    int best_g = -1;
    for (size_t g = 0; g < ng; ++g) {
      const double v = iou(anchors[a], gts[g]);
      if (v > best) { best = v; best_g = int(g); }
      if (v > best_gt_iou[g]) { best_gt_iou[g] = v; best_gt_anchor[g] = int(a); }
    }
    if (best >= pos_iou) {
      res.labels[a] = 1;
      res.matched_gt[a] = best_g;
    } else if (best >= neg_iou) {
      res.labels[a] = -1;
    }
  }
  // Force-match each gt to its best anchor; on contention the gt with the
  // higher IoU keeps the anchor.
  std::vector<double> claim_iou(na, -1.0);
  for (size_t a = 0; a < na; ++a)
    if (res.labels[a] == 1) claim_iou[a] = iou(anchors[a], gts[size_t(res.matched_gt[a])]);
  for (size_t g = 0; g < ng; ++g) {
    const int a = best_gt_anchor[g];
    if (a < 0 || best_gt_iou[g] <= 0.0) continue;
    if (best_gt_iou[g] > claim_iou[size_t(a)]) {
      res.labels[size_t(a)] = 1;
      res.matched_gt[size_t(a)] = int(g);
      claim_iou[size_t(a)] = best_gt_iou[g];
    }
  }
  for (size_t a = 0; a < na; ++a)
    if (res.labels[a] == 1) {
      res.box_targets[a] = encode_box(gts[size_t(res.matched_gt[a])], anchors[a]);
      ++res.num_pos;
    }
  return res;
}

std::array<double, 4> encode_box(const GroundTruthBox& gt, const GroundTruthBox& anchor) {
  const double aw = anchor.width(), ah = anchor.height();
  const double acx = 0.5 * (anchor.x_min + anchor.x_max);
  const double acy = 0.5 * (anchor.y_min + anchor.y_max);
  const double gcx = 0.5 * (gt.x_min + gt.x_max);
  const double gcy = 0.5 * (gt.y_min + gt.y_max);
  return {(gcx - acx) / aw, (gcy - acy) / ah, std::log(gt.width() / aw),
          std::log(gt.height() / ah)};
}

GroundTruthBox decode_box(const std::array<double, 4>& d, const GroundTruthBox& anchor) {
  const double aw = anchor.width(), ah = anchor.height();
  const double acx = 0.5 * (anchor.x_min + anchor.x_max);
  const double acy = 0.5 * (anchor.y_min + anchor.y_max);
  const double cx = acx + d[0] * aw;
  const double cy = acy + d[1] * ah;
  const double w = aw * std::exp(std::min(d[2], 8.0));
  const double h = ah * std::exp(std::min(d[3], 8.0));
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, anchor.class_id};
}

std::vector<Detection> nms(std::vector<Detection> dets, double thr) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id != d.class_id) continue;
      if (iou(k.box(), d.box()) > thr) { suppressed = true; break; }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace srtod

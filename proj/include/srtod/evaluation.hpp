#pragma once

#include <string>
#include <vector>

#include "srtod/boxes.hpp"

namespace srtod {

/// Detections and ground truth for one image.
struct ImageEval {
  std::vector<Detection> dets;
  std::vector<GroundTruthBox> gts;
};

/// Greedy matching at one IoU threshold. `dets` must be sorted by
/// descending score; each detection takes the highest-IoU still-unmatched
/// gt with IoU >= iou_thr. Returns the matched gt index per detection
/// (-1 for unmatched).
std::vector<int> match_detections(const std::vector<Detection>& dets,
                                  const std::vector<GroundTruthBox>& gts,
                                  double iou_thr);

struct PRPoint {
  double recall = 0, precision = 0, score = 0;
};

/// COCO-style AP with AI-TOD size buckets. `ap` averages IoU thresholds
/// 0.50:0.05:0.95; bucket APs restrict ground truth to the bucket and
/// ignore detections matched to out-of-bucket gts. Bucket APs are NaN when
/// the dataset has no gts in that bucket.
struct APReport {
  double ap = 0, ap50 = 0, ap75 = 0;
  double ap_vt = 0, ap_t = 0, ap_s = 0;
  std::vector<PRPoint> pr_all, pr_vt, pr_t, pr_s;  // curves at IoU 0.5
  int num_images = 0;
  int num_gts = 0;

  std::string to_string() const;
};

APReport compute_ap(const std::vector<ImageEval>& images, int num_classes);

/// Writes the IoU-0.5 PR curves as CSV (bucket,score,recall,precision).
void write_pr_csv(const APReport& report, const std::string& path);

}  // namespace srtod

#include "srtod/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "srtod/errors.hpp"

namespace srtod {

std::vector<int> match_detections(const std::vector<Detection>& dets,
                                  const std::vector<GroundTruthBox>& gts,
                                  double iou_thr) {
  std::vector<int> matched(dets.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (size_t d = 0; d < dets.size(); ++d) {
    double best = -1.0;
    int best_g = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(dets[d].box(), gts[g]);
      if (v >= iou_thr && v > best) {
        best = v;
        best_g = int(g);
      }
    }
    if (best_g >= 0) {
      matched[d] = best_g;
      taken[size_t(best_g)] = true;
    }
  }
  return matched;
}

namespace {

constexpr double kIouThrs[] = {0.50, 0.55, 0.60, 0.65, 0.70,
                               0.75, 0.80, 0.85, 0.90, 0.95};

struct ScoredFlag {
  double score;
  int image;
  int order;
  bool tp;
  bool ignored;
};

/// AP for one (class, IoU threshold, bucket) via 101-point interpolation.
/// Returns nullopt when the bucket has no gts for this class. Optionally
/// emits the raw PR points.
std::optional<double> ap_single(const std::vector<ImageEval>& images, int cls,
                                double iou_thr,
                                std::optional<SizeBucket> bucket,
                                std::vector<PRPoint>* pr_out) {
  std::vector<ScoredFlag> flags;
  int npos = 0;
  for (size_t im = 0; im < images.size(); ++im) {
    std::vector<Detection> dets;
    for (const auto& d : images[im].dets)
      if (d.class_id == cls) dets.push_back(d);
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<GroundTruthBox> gts;
    for (const auto& g : images[im].gts)
      if (g.class_id == cls) gts.push_back(g);
    for (const auto& g : gts)
      if (!bucket || size_bucket(g) == *bucket) ++npos;

    const std::vector<int> matched = match_detections(dets, gts, iou_thr);
    for (size_t d = 0; d < dets.size(); ++d) {
      ScoredFlag f;
      f.score = dets[d].score;
      f.image = int(im);
      f.order = int(d);
      if (matched[d] >= 0) {
        const bool in_bucket =
            !bucket || size_bucket(gts[size_t(matched[d])]) == *bucket;
        f.tp = in_bucket;
        f.ignored = !in_bucket;
      } else {
        f.tp = false;
        f.ignored = false;  // unmatched detections count as FP in every bucket
      }
      flags.push_back(f);
    }
  }
  if (npos == 0) return std::nullopt;

  std::sort(flags.begin(), flags.end(), [](const ScoredFlag& a, const ScoredFlag& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.order < b.order;
  });

  std::vector<double> prec, rec, scores;
  int tp = 0, fp = 0;
  for (const auto& f : flags) {
    if (f.ignored) continue;
    if (f.tp) ++tp; else ++fp;
    prec.push_back(double(tp) / double(tp + fp));
    rec.push_back(double(tp) / double(npos));
    scores.push_back(f.score);
  }
  if (pr_out) {
    pr_out->clear();
    for (size_t i = 0; i < prec.size(); ++i)
      pr_out->push_back({rec[i], prec[i], scores[i]});
  }
  if (prec.empty()) return 0.0;

  // Monotone precision envelope from the right, then the 101-point mean.
  std::vector<double> env = prec;
  for (int i = int(env.size()) - 2; i >= 0; --i)
    env[size_t(i)] = std::max(env[size_t(i)], env[size_t(i) + 1]);
  double acc = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    // first index with recall >= r
    size_t lo = std::lower_bound(rec.begin(), rec.end(), r) - rec.begin();
    acc += lo < env.size() ? env[lo] : 0.0;
  }
  return acc / 101.0;
}

/// Mean over classes that have gts; nullopt if no class has any.
std::optional<double> ap_mean_over_classes(const std::vector<ImageEval>& images,
                                           int num_classes, double iou_thr,
                                           std::optional<SizeBucket> bucket,
                                           std::vector<PRPoint>* pr_out = nullptr) {
  double acc = 0.0;
  int n = 0;
  for (int c = 0; c < num_classes; ++c) {
    auto ap = ap_single(images, c, iou_thr, bucket, c == 0 ? pr_out : nullptr);
    if (ap) {
      acc += *ap;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return acc / n;
}

double mean_over_thresholds(const std::vector<ImageEval>& images, int num_classes,
                            std::optional<SizeBucket> bucket) {
  double acc = 0.0;
  int n = 0;
  for (double thr : kIouThrs) {
    auto ap = ap_mean_over_classes(images, num_classes, thr, bucket);
    if (ap) {
      acc += *ap;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : acc / n;
}

}  // namespace

APReport compute_ap(const std::vector<ImageEval>& images, int num_classes) {
  if (num_classes < 1) throw ConfigError("compute_ap: num_classes must be >= 1");
  APReport r;
  r.num_images = int(images.size());
  for (const auto& im : images) r.num_gts += int(im.gts.size());

  r.ap = mean_over_thresholds(images, num_classes, std::nullopt);
  if (std::isnan(r.ap)) r.ap = 0.0;  // no gts at all
  auto ap50 = ap_mean_over_classes(images, num_classes, 0.50, std::nullopt, &r.pr_all);
  auto ap75 = ap_mean_over_classes(images, num_classes, 0.75, std::nullopt);
  r.ap50 = ap50.value_or(0.0);
  r.ap75 = ap75.value_or(0.0);
  r.ap_vt = mean_over_thresholds(images, num_classes, SizeBucket::kVeryTiny);
  r.ap_t = mean_over_thresholds(images, num_classes, SizeBucket::kTiny);
  r.ap_s = mean_over_thresholds(images, num_classes, SizeBucket::kSmall);
  ap_mean_over_classes(images, num_classes, 0.50, SizeBucket::kVeryTiny, &r.pr_vt);
  ap_mean_over_classes(images, num_classes, 0.50, SizeBucket::kTiny, &r.pr_t);
  ap_mean_over_classes(images, num_classes, 0.50, SizeBucket::kSmall, &r.pr_s);
  return r;
}

std::string APReport::to_string() const {
  auto fmt = [](double v) {
    if (std::isnan(v)) return std::string("   n/a");
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%6.4f", v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "images: " << num_images << "  gts: " << num_gts << "\n";
  os << "  AP     AP_0.5 AP_0.75 AP_vt  AP_t   AP_s\n";
  os << "  " << fmt(ap) << " " << fmt(ap50) << " " << fmt(ap75) << "  "
     << fmt(ap_vt) << " " << fmt(ap_t) << " " << fmt(ap_s) << "\n";
  return os.str();
}

void write_pr_csv(const APReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw StorageError("cannot open PR csv: " + path);
  f << "bucket,score,recall,precision\n";
  auto dump = [&f](const char* name, const std::vector<PRPoint>& pts) {
    for (const auto& p : pts)
      f << name << "," << p.score << "," << p.recall << "," << p.precision << "\n";
  };
  dump("all", report.pr_all);
  dump("very_tiny", report.pr_vt);
  dump("tiny", report.pr_t);
  dump("small", report.pr_s);
}

}  // namespace srtod

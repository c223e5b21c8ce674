#pragma once

// Brute-force reference implementations used to validate the production
// paths. Everything here is written as plain scalar loops, independent of
// the library's vectorized/graph code.

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include "srtod/boxes.hpp"
#include "srtod/tensor.hpp"

namespace srtod::testing {

/// Elementwise-loop pixel difference map.
template <typename T>
Tensor<T> oracle_pixel_diff(const Tensor<T>& ir, const Tensor<T>& io) {
  const int C = ir.dim(0), H = ir.dim(1), W = ir.dim(2);
  Tensor<T> out({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int c = 0; c < C; ++c)
        acc += std::abs(double(ir.at(c, y, x)) - double(io.at(c, y, x)));
      out.at(0, y, x) = T(acc / C);
    }
  return out;
}

/// O(N^4) direct DFT ideal high-pass (small images only).
inline Tensor<double> oracle_highpass(const Tensor<double>& img, double rho) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<double> out(img.shape);
  const double half_diag = std::sqrt(0.25 * H * H + 0.25 * W * W);
  const double cutoff = rho * half_diag;
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (int c = 0; c < C; ++c) {
    std::vector<std::complex<double>> spec(size_t(H) * W);
    for (int u = 0; u < H; ++u)
      for (int v = 0; v < W; ++v) {
        std::complex<double> acc(0, 0);
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const double ang = -two_pi * (double(u) * y / H + double(v) * x / W);
            acc += img.at(c, y, x) * std::complex<double>(std::cos(ang), std::sin(ang));
          }
        const int fu = std::min(u, H - u), fv = std::min(v, W - v);
        const double r = std::sqrt(double(fu) * fu + double(fv) * fv);
        spec[size_t(u) * W + v] = (r <= cutoff) ? std::complex<double>(0, 0) : acc;
      }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        std::complex<double> acc(0, 0);
        for (int u = 0; u < H; ++u)
          for (int v = 0; v < W; ++v) {
            const double ang = two_pi * (double(u) * y / H + double(v) * x / W);
            acc += spec[size_t(u) * W + v] *
                   std::complex<double>(std::cos(ang), std::sin(ang));
          }
        out.at(c, y, x) = acc.real() / (double(H) * W);
      }
  }
  return out;
}

/// Loop oracle for the channel reweighting MLP path.
template <typename T>
std::vector<double> oracle_reweight(const Tensor<T>& feat,
                                    const Tensor<T>& w1, const Tensor<T>& b1,
                                    const Tensor<T>& w2, const Tensor<T>& b2) {
  const int C = feat.dim(0), H = feat.dim(1), W = feat.dim(2);
  const int Hid = w1.dim(0);
  std::vector<double> avg(size_t(C), 0.0), mx(size_t(C), -1e300);
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        avg[size_t(c)] += double(feat.at(c, y, x));
        mx[size_t(c)] = std::max(mx[size_t(c)], double(feat.at(c, y, x)));
      }
    avg[size_t(c)] /= double(H) * W;
  }
  auto mlp = [&](const std::vector<double>& v) {
    std::vector<double> hid(size_t(Hid), 0.0), out(size_t(C), 0.0);
    for (int o = 0; o < Hid; ++o) {
      double acc = double(b1[size_t(o)]);
      for (int i = 0; i < C; ++i) acc += double(w1[size_t(o * C + i)]) * v[size_t(i)];
      hid[size_t(o)] = std::max(0.0, acc);
    }
    for (int o = 0; o < C; ++o) {
      double acc = double(b2[size_t(o)]);
      for (int i = 0; i < Hid; ++i) acc += double(w2[size_t(o * Hid + i)]) * hid[size_t(i)];
      out[size_t(o)] = acc;
    }
    return out;
  };
  const auto pa = mlp(avg), pm = mlp(mx);
  std::vector<double> out(size_t(C), 0.0);
  for (int c = 0; c < C; ++c)
    out[size_t(c)] = 1.0 / (1.0 + std::exp(-(pa[size_t(c)] + pm[size_t(c)])));
  return out;
}

/// Brute-force max-IoU target assignment following the stated rule:
/// IoU >= pos positive (argmax gt), < neg negative, between ignored, every
/// gt force-matched to its best anchor (higher IoU wins contested anchors).
struct OracleAssign {
  std::vector<int> labels;  // 1/0/-1
  std::vector<int> matched;
};
inline OracleAssign oracle_assign(const std::vector<GroundTruthBox>& anchors,
                                  const std::vector<GroundTruthBox>& gts,
                                  double pos_thr, double neg_thr) {
  OracleAssign res;
  res.labels.assign(anchors.size(), 0);
  res.matched.assign(anchors.size(), -1);
  for (size_t a = 0; a < anchors.size(); ++a) {
    double best = -1;
    int bg = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a], gts[g]);
      if (v > best) { best = v; bg = int(g); }
    }
    if (bg >= 0 && best >= pos_thr) {
      res.labels[a] = 1;
      res.matched[a] = bg;
    } else if (bg >= 0 && best >= neg_thr) {
      res.labels[a] = -1;
    }
  }
  std::vector<double> claimed(anchors.size(), -1.0);
  for (size_t a = 0; a < anchors.size(); ++a)
    if (res.labels[a] == 1)
      claimed[a] = iou(anchors[a], gts[size_t(res.matched[a])]);
  for (size_t g = 0; g < gts.size(); ++g) {
    double best = 0.0;
    int ba = -1;
    for (size_t a = 0; a < anchors.size(); ++a) {
      const double v = iou(anchors[a], gts[g]);
      if (v > best) { best = v; ba = int(a); }
    }
    if (ba >= 0 && best > claimed[size_t(ba)]) {
      res.labels[size_t(ba)] = 1;
      res.matched[size_t(ba)] = int(g);
      claimed[size_t(ba)] = best;
    }
  }
  return res;
}

/// Greedy matcher replicated per the spec text (detections pre-sorted).
inline std::vector<int> oracle_match(const std::vector<Detection>& dets,
                                     const std::vector<GroundTruthBox>& gts,
                                     double thr) {
  std::vector<int> matched(dets.size(), -1);
  std::vector<char> used(gts.size(), 0);
  for (size_t d = 0; d < dets.size(); ++d) {
    int best_g = -1;
    double best = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double v = iou(dets[d].box(), gts[g]);
      if (v >= thr && v > best) { best = v; best_g = int(g); }
    }
    if (best_g >= 0) { matched[d] = best_g; used[size_t(best_g)] = 1; }
  }
  return matched;
}

/// Direct PR-integration AP oracle for one class at one IoU threshold.
/// Detections across images are pooled by score; precision at each of the
/// 101 recall points is the maximum precision at recall >= r (scanned
/// naively). `bucket_of` maps a gt to its bucket id; bucket < 0 = all.
struct OracleImage {
  std::vector<Detection> dets;
  std::vector<GroundTruthBox> gts;
};
inline std::optional<double> oracle_ap(const std::vector<OracleImage>& images,
                                       int cls, double thr, int bucket) {
  struct Flag { double score; int image, order; int kind; };  // 1 tp, 0 fp, -1 ign
  std::vector<Flag> flags;
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
      if (bucket < 0 || int(size_bucket(g)) == bucket) ++npos;
    auto matched = oracle_match(dets, gts, thr);
    for (size_t d = 0; d < dets.size(); ++d) {
      Flag f{dets[d].score, int(im), int(d), 0};
      if (matched[d] >= 0)
        f.kind = (bucket < 0 || int(size_bucket(gts[size_t(matched[d])])) == bucket) ? 1 : -1;
      flags.push_back(f);
    }
  }
  if (npos == 0) return std::nullopt;
  std::sort(flags.begin(), flags.end(), [](const Flag& a, const Flag& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.order < b.order;
  });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& f : flags) {
    if (f.kind == -1) continue;
    if (f.kind == 1) ++tp; else ++fp;
    precision.push_back(double(tp) / (tp + fp));
    recall.push_back(double(tp) / npos);
  }
  double acc = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double best = 0.0;
    for (size_t i = 0; i < precision.size(); ++i)
      if (recall[i] >= r) best = std::max(best, precision[i]);
    acc += best;
  }
  return acc / 101.0;
}

}  // namespace srtod::testing

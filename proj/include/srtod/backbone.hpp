#pragma once

#include <array>
#include <cmath>
#include <string>

#include "srtod/conv.hpp"
#include "srtod/ops.hpp"
#include "srtod/params.hpp"

namespace srtod {

enum class NormKind { kBatch, kGroup };

struct BackboneConfig {
  int channels = 64;
  std::vector<int> stage_depths = {1, 1, 1, 1};
  NormKind norm = NormKind::kGroup;

  void validate() const {
    if (channels <= 0 || channels % 4 != 0)
      throw ConfigError("backbone channels must be positive and divisible by 4");
    if (stage_depths.size() != 4)
      throw ConfigError("backbone needs exactly 4 stride stages");
    for (int d : stage_depths)
      if (d < 1) throw ConfigError("stage depth must be >= 1");
  }
};

/// Largest divisor of C not exceeding 8, used as the group-norm group count.
inline int norm_groups(int c) {
  for (int g = 8; g >= 1; --g)
    if (c % g == 0) return g;
  return 1;
}

/// Per-image statistics gathered from batch-norm layers during training,
/// merged into running averages by the trainer in deterministic order.
template <typename T>
using NormStatsSink = std::vector<std::pair<Param<T>*, NormStats<T>>>;

/// Normalization layer: group norm, or batch norm run per sample (the
/// gradient-accumulation form) with running statistics for inference.
template <typename T>
struct NormLayer {
  NormKind kind = NormKind::kGroup;
  int groups = 1;
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
  Param<T>* run_mean = nullptr;  // batch norm only
  Param<T>* run_var = nullptr;
  static constexpr double kEps = 1e-5;

  static NormLayer make(ParamStore<T>& store, const std::string& prefix, int c,
                        NormKind kind) {
    NormLayer n;
    n.kind = kind;
    n.groups = kind == NormKind::kGroup ? norm_groups(c) : c;
    n.gamma = store.create(prefix + ".gamma", {c}, Init::kOnes);
    n.beta = store.create(prefix + ".beta", {c}, Init::kZeros);
    if (kind == NormKind::kBatch) {
      n.run_mean = store.create(prefix + ".run_mean", {c}, Init::kZeros);
      n.run_var = store.create(prefix + ".run_var", {c}, Init::kOnes);
      n.run_mean->trainable = false;
      n.run_var->trainable = false;
      n.run_mean->decay = false;
      n.run_var->decay = false;
    }
    n.gamma->decay = false;
    n.beta->decay = false;
    return n;
  }

  Var<T> apply(Graph<T>& g, Var<T> x, bool training, NormStatsSink<T>* sink) const {
    if (kind == NormKind::kGroup)
      return group_norm(x, use_param(g, gamma), use_param(g, beta), groups, T(kEps));
    if (training) {
      NormStats<T> stats;
      Var<T> y = group_norm(x, use_param(g, gamma), use_param(g, beta),
                            /*groups=*/g.val(x.id).dim(0), T(kEps), &stats);
      if (sink) sink->emplace_back(run_mean, std::move(stats));
      return y;
    }
    const int c = g.val(x.id).dim(0);
    std::vector<T> scale(size_t(c), T(0));
    std::vector<T> shift(size_t(c), T(0));
    for (int i = 0; i < c; ++i) {
      const T s = gamma->value[size_t(i)] /
                  T(std::sqrt(double(run_var->value[size_t(i)]) + kEps));
      scale[size_t(i)] = s;
      shift[size_t(i)] = beta->value[size_t(i)] - run_mean->value[size_t(i)] * s;
    }
    return affine_channel_const(x, scale, shift);
  }
};

template <typename T>
struct ConvLayer {
  Param<T>* w = nullptr;
  Param<T>* b = nullptr;
  int stride = 1, pad = 1;

  static ConvLayer make(ParamStore<T>& store, const std::string& prefix, int ci,
                        int co, int k, int stride, int pad) {
    ConvLayer c;
    c.w = store.create(prefix + ".w", {co, ci, k, k}, Init::kHeNormal,
                       double(ci) * k * k);
    c.b = store.create(prefix + ".b", {co}, Init::kZeros);
    c.b->decay = false;
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Var<T> apply(Graph<T>& g, Var<T> x) const {
    return conv2d(x, use_param(g, w), use_param(g, b), stride, pad);
  }
};

/// Multi-scale features at strides 4..64 with a shared channel count.
template <typename T>
struct FeaturePyramid {
  Var<T> p2, p3, p4, p5, p6;

  Var<T> level(int l) const {
    switch (l) {
      case 2: return p2;
      case 3: return p3;
      case 4: return p4;
      case 5: return p5;
      case 6: return p6;
    }
    throw ConfigError("pyramid level out of range");
  }
};

/// Residual backbone (4 stride stages) + top-down FPN producing P2..P6.
template <typename T>
class Backbone {
 public:
  Backbone(ParamStore<T>& store, const BackboneConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int C = cfg.channels;
    stem_ = ConvLayer<T>::make(store, "backbone.stem", 3, C, 3, 2, 1);
    stem_norm_ = NormLayer<T>::make(store, "backbone.stem.norm", C, cfg.norm);
    for (int s = 0; s < 4; ++s) {
      Stage st;
      const std::string sp = "backbone.s" + std::to_string(s + 1);
      st.down = ConvLayer<T>::make(store, sp + ".down", C, C, 3, 2, 1);
      st.down_norm = NormLayer<T>::make(store, sp + ".down.norm", C, cfg.norm);
      for (int b = 0; b < cfg.stage_depths[size_t(s)]; ++b) {
        Block blk;
        const std::string bp = sp + ".b" + std::to_string(b + 1);
        blk.conv1 = ConvLayer<T>::make(store, bp + ".conv1", C, C, 3, 1, 1);
        blk.norm1 = NormLayer<T>::make(store, bp + ".norm1", C, cfg.norm);
        blk.conv2 = ConvLayer<T>::make(store, bp + ".conv2", C, C, 3, 1, 1);
        blk.norm2 = NormLayer<T>::make(store, bp + ".norm2", C, cfg.norm);
        st.blocks.push_back(blk);
      }
      stages_[size_t(s)] = st;
    }
    for (int l = 2; l <= 5; ++l) {
      lateral_[size_t(l - 2)] = ConvLayer<T>::make(
          store, "fpn.lat" + std::to_string(l), C, C, 1, 1, 0);
      output_[size_t(l - 2)] = ConvLayer<T>::make(
          store, "fpn.out" + std::to_string(l), C, C, 3, 1, 1);
    }
  }

  /// image {3,H,W} with H,W divisible by 64 -> P2..P6. No silent padding.
  FeaturePyramid<T> extract_pyramid(Graph<T>& g, Var<T> image, bool training,
                                    NormStatsSink<T>* sink = nullptr) const {
    const Tensor<T>& iv = g.val(image.id);
    if (iv.rank() != 3 || iv.dim(0) != 3)
      throw ShapeError("extract_pyramid: image must be {3,H,W}");
    if (iv.dim(1) % 64 != 0 || iv.dim(2) % 64 != 0)
      throw ShapeError("extract_pyramid: H and W must be divisible by 64, got " +
                       iv.shape_str());

    Var<T> x = relu(stem_norm_.apply(g, stem_.apply(g, image), training, sink));
    Var<T> c[4];
    for (int s = 0; s < 4; ++s) {
      const Stage& st = stages_[size_t(s)];
      x = relu(st.down_norm.apply(g, st.down.apply(g, x), training, sink));
      for (const Block& blk : st.blocks) {
        Var<T> y = relu(blk.norm1.apply(g, blk.conv1.apply(g, x), training, sink));
        y = blk.norm2.apply(g, blk.conv2.apply(g, y), training, sink);
        x = relu(add(y, x));
      }
      c[s] = x;
    }

    FeaturePyramid<T> pyr;
    Var<T> l5 = lateral_[3].apply(g, c[3]);
    Var<T> l4 = add(lateral_[2].apply(g, c[2]), upsample_nearest2x(l5));
    Var<T> l3 = add(lateral_[1].apply(g, c[1]), upsample_nearest2x(l4));
    Var<T> l2 = add(lateral_[0].apply(g, c[0]), upsample_nearest2x(l3));
    pyr.p5 = output_[3].apply(g, l5);
    pyr.p4 = output_[2].apply(g, l4);
    pyr.p3 = output_[1].apply(g, l3);
    pyr.p2 = output_[0].apply(g, l2);
    pyr.p6 = maxpool2d(pyr.p5, 2);
    return pyr;
  }

  const BackboneConfig& config() const { return cfg_; }

 private:
  struct Block {
    ConvLayer<T> conv1, conv2;
    NormLayer<T> norm1, norm2;
  };
  struct Stage {
    ConvLayer<T> down;
    NormLayer<T> down_norm;
    std::vector<Block> blocks;
  };

  BackboneConfig cfg_;
  ConvLayer<T> stem_;
  NormLayer<T> stem_norm_;
  std::array<Stage, 4> stages_;
  std::array<ConvLayer<T>, 4> lateral_;
  std::array<ConvLayer<T>, 4> output_;
};

}  // namespace srtod

#pragma once

#include <string>

#include "srtod/backbone.hpp"

namespace srtod {

enum class DgfeMode { kAttention, kConcat, kMultiply, kOff };
enum class ThresholdMode { kLearnable, kFixed, kNone };
enum class ResizeMode { kMaxpool, kNearest, kBilinear };

struct DgfeConfig {
  DgfeMode mode = DgfeMode::kAttention;
  ThresholdMode threshold = ThresholdMode::kLearnable;
  double threshold_init = 0.1;  // init for learnable, value for fixed
  double tau = 0.05;            // surrogate temperature
  ResizeMode resize = ResizeMode::kMaxpool;
  int reduction = 4;
  bool stop_grad_diff = false;  // detach D before enhancement

  void validate() const {
    if (tau <= 0.0) throw ConfigError("dgfe tau must be positive");
    if (threshold_init < 0.0 || threshold_init > 1.0)
      throw ConfigError("dgfe threshold must be in [0,1]");
    if (reduction < 1) throw ConfigError("dgfe reduction must be >= 1");
  }
};

/// Difference Map Guided Feature Enhancement: binarize the difference map
/// at a (learnable) threshold, resize it onto the feature grid with a +1
/// offset so inactive cells keep their features, reweight channels from
/// pooled statistics, and apply the combined element-wise attention.
template <typename T>
class Dgfe {
 public:
  Dgfe(ParamStore<T>& store, int channels, const DgfeConfig& cfg)
      : cfg_(cfg), channels_(channels) {
    cfg.validate();
    if (channels % cfg.reduction != 0)
      throw ConfigError("dgfe: channels " + std::to_string(channels) +
                        " not divisible by reduction " + std::to_string(cfg.reduction));
    const int hidden = channels / cfg.reduction;
    t_ = store.create("dgfe.t", {1}, Init::kConstant, cfg.threshold_init);
    t_->trainable = (cfg.threshold == ThresholdMode::kLearnable);
    t_->decay = false;
    mlp_w1_ = store.create("dgfe.mlp.w1", {hidden, channels}, Init::kHeNormal,
                           double(channels));
    mlp_b1_ = store.create("dgfe.mlp.b1", {hidden}, Init::kZeros);
    mlp_w2_ = store.create("dgfe.mlp.w2", {channels, hidden}, Init::kHeNormal,
                           double(hidden));
    mlp_b2_ = store.create("dgfe.mlp.b2", {channels}, Init::kZeros);
    mlp_b1_->decay = false;
    mlp_b2_->decay = false;
    concat_ = ConvLayer<T>::make(store, "dgfe.concat", channels + 1, channels, 1, 1, 0);
  }

  /// Threshold the difference map and resize onto the feature grid:
  /// F = resize(D > t) + 1, entries in {1,2} under maxpool/nearest resize.
  /// With threshold mode none the raw map is resized instead: F = resize(D)+1.
  /// soft_forward swaps the hard step for its logistic surrogate so the
  /// whole path is differentiable (finite-difference validation only).
  Var<T> filtration(Graph<T>& g, Var<T> d, int factor, bool soft_forward = false) const {
    const Tensor<T>& dv = g.val(d.id);
    if (dv.rank() != 3 || dv.dim(0) != 1)
      throw ShapeError("filtration: difference map must be {1,H,W}");
    if (dv.dim(1) % factor != 0 || dv.dim(2) % factor != 0)
      throw ShapeError("filtration: map dims " + dv.shape_str() +
                       " not a multiple of resize factor " + std::to_string(factor));
    Var<T> base;
    if (cfg_.threshold == ThresholdMode::kNone) {
      base = d;
    } else {
      base = hard_threshold_ste(d, use_param(g, t_), T(cfg_.tau), soft_forward);
    }
    return add_scalar(resize(g, base, factor), T(1));
  }

  /// Binary map resized onto the feature grid (no +1); the concat and
  /// multiply ablation variants consume this directly.
  Var<T> resized_binary(Graph<T>& g, Var<T> d, int factor, bool soft_forward = false) const {
    Var<T> base = cfg_.threshold == ThresholdMode::kNone
                      ? d
                      : hard_threshold_ste(d, use_param(g, t_), T(cfg_.tau), soft_forward);
    return resize(g, base, factor);
  }

  /// Channel weights from pooled descriptors through the shared MLP:
  /// w = sigmoid(MLP(avgpool(x)) + MLP(maxpool(x))), each weight in (0,1).
  Var<T> reweight(Graph<T>& g, Var<T> feat) const {
    Var<T> avg = mlp(g, global_avgpool(feat));
    Var<T> mx = mlp(g, global_maxpool(feat));
    return sigmoid(add(avg, mx));
  }

  /// Element-wise attention: P2' = (reweight(P2) x filtration(D)) x P2.
  Var<T> enhance(Graph<T>& g, Var<T> feat, Var<T> d, int factor,
                 bool soft_forward = false) const {
    check_map_shape(g, feat, d, factor);
    Var<T> w = reshape(reweight(g, feat), {channels_, 1, 1});
    Var<T> f = filtration(g, d, factor, soft_forward);
    return bmul(bmul(w, f), feat);
  }

  /// Concat ablation: append the resized binary map as an extra channel,
  /// then restore the channel count with a 1x1 conv.
  Var<T> enhance_concat(Graph<T>& g, Var<T> feat, Var<T> d, int factor) const {
    check_map_shape(g, feat, d, factor);
    Var<T> db = resized_binary(g, d, factor);
    return concat_.apply(g, concat_channels(feat, db));
  }

  /// Element-wise multiply ablation: resized binary map times features,
  /// without the +1 offset (zeroes features where the map is inactive).
  Var<T> enhance_multiply(Graph<T>& g, Var<T> feat, Var<T> d, int factor) const {
    check_map_shape(g, feat, d, factor);
    return bmul(resized_binary(g, d, factor), feat);
  }

  /// Dispatch on the configured mode; kOff returns the features untouched.
  Var<T> apply(Graph<T>& g, Var<T> feat, Var<T> d, int factor) const {
    if (cfg_.mode == DgfeMode::kOff) return feat;
    if (cfg_.stop_grad_diff) d = stop_grad(d);
    switch (cfg_.mode) {
      case DgfeMode::kAttention: return enhance(g, feat, d, factor);
      case DgfeMode::kConcat: return enhance_concat(g, feat, d, factor);
      case DgfeMode::kMultiply: return enhance_multiply(g, feat, d, factor);
      default: return feat;
    }
  }

  Param<T>* threshold_param() const { return t_; }
  const DgfeConfig& config() const { return cfg_; }

 private:
  Var<T> mlp(Graph<T>& g, Var<T> v) const {
    Var<T> h = relu(linear(v, use_param(g, mlp_w1_), use_param(g, mlp_b1_)));
    return linear(h, use_param(g, mlp_w2_), use_param(g, mlp_b2_));
  }

  Var<T> resize(Graph<T>& g, Var<T> x, int factor) const {
    switch (cfg_.resize) {
      case ResizeMode::kMaxpool: return maxpool2d(x, factor);
      case ResizeMode::kNearest: return resize_nearest_down(x, factor);
      case ResizeMode::kBilinear: return resize_bilinear_down(x, factor);
    }
    throw ConfigError("dgfe: unknown resize mode");
  }

  void check_map_shape(Graph<T>& g, Var<T> feat, Var<T> d, int factor) const {
    const Tensor<T>& fv = g.val(feat.id);
    const Tensor<T>& dv = g.val(d.id);
    if (fv.rank() != 3 || fv.dim(0) != channels_)
      throw ShapeError("dgfe: feature map must be {C,h,w}");
    if (dv.rank() != 3 || dv.dim(0) != 1 || dv.dim(1) != fv.dim(1) * factor ||
        dv.dim(2) != fv.dim(2) * factor)
      throw ShapeError("dgfe: difference map " + dv.shape_str() +
                       " must be exactly " + std::to_string(factor) +
                       "x the feature dims " + fv.shape_str());
  }

  DgfeConfig cfg_;
  int channels_;
  Param<T>* t_;
  Param<T>* mlp_w1_;
  Param<T>* mlp_b1_;
  Param<T>* mlp_w2_;
  Param<T>* mlp_b2_;
  ConvLayer<T> concat_;
};

}  // namespace srtod

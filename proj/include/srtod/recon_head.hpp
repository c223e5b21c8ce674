#pragma once

#include <string>
#include <vector>

#include "srtod/backbone.hpp"

namespace srtod {

enum class ReconSource { kP2, kP3 };

/// One upsampling block: transpose conv (4x4, stride 2) halves the channels
/// and doubles the spatial dims, then two channel-preserving 3x3 convs with
/// ReLU after each.
template <typename T>
struct UpBlock {
  Param<T>* tconv_w = nullptr;  // {C, C/2, 4, 4}
  Param<T>* tconv_b = nullptr;
  ConvLayer<T> conv1, conv2;

  static UpBlock make(ParamStore<T>& store, const std::string& prefix, int ci) {
    if (ci % 2 != 0)
      throw ConfigError("up_block: input channels must be even, got " +
                        std::to_string(ci));
    UpBlock u;
    const int co = ci / 2;
    u.tconv_w = store.create(prefix + ".tconv.w", {ci, co, 4, 4}, Init::kHeNormal,
                             double(ci) * 4 * 4 / 4.0);
    u.tconv_b = store.create(prefix + ".tconv.b", {co}, Init::kZeros);
    u.tconv_b->decay = false;
    u.conv1 = ConvLayer<T>::make(store, prefix + ".conv1", co, co, 3, 1, 1);
    u.conv2 = ConvLayer<T>::make(store, prefix + ".conv2", co, co, 3, 1, 1);
    return u;
  }

  Var<T> apply(Graph<T>& g, Var<T> x) const {
    Var<T> y = conv_transpose2d(x, use_param(g, tconv_w), use_param(g, tconv_b),
                                /*stride=*/2, /*pad=*/1);
    y = relu(conv1.apply(g, y));
    y = relu(conv2.apply(g, y));
    return y;
  }
};

/// Self-reconstruction head: n upsampling blocks (2 from P2, 3 from P3)
/// followed by a 3-channel 3x3 conv and a sigmoid, mapping the source
/// feature level back to an image of the original size.
template <typename T>
class ReconHead {
 public:
  ReconHead(ParamStore<T>& store, int channels, ReconSource source)
      : source_(source) {
    const int n = source == ReconSource::kP2 ? 2 : 3;
    const int div = 1 << n;
    if (channels % div != 0)
      throw ConfigError("recon head from " +
                        std::string(source == ReconSource::kP2 ? "P2" : "P3") +
                        " needs channels divisible by " + std::to_string(div));
    int c = channels;
    for (int i = 0; i < n; ++i) {
      blocks_.push_back(UpBlock<T>::make(store, "recon.up" + std::to_string(i + 1), c));
      c /= 2;
    }
    final_ = ConvLayer<T>::make(store, "recon.final", c, 3, 3, 1, 1);
  }

  /// source feature {C,H/s,W/s} -> I_r {3,H,W}, every value in (0,1).
  Var<T> reconstruct(Graph<T>& g, Var<T> source_feat) const {
    Var<T> x = source_feat;
    for (const auto& blk : blocks_) x = blk.apply(g, x);
    return sigmoid(final_.apply(g, x));
  }

  ReconSource source() const { return source_; }
  int n_up_blocks() const { return int(blocks_.size()); }

 private:
  ReconSource source_;
  std::vector<UpBlock<T>> blocks_;
  ConvLayer<T> final_;
};

/// Mean squared error between reconstruction and original (mean over all
/// 3*H*W elements).
template <typename T>
Var<T> recon_loss(Var<T> ir, Var<T> io) {
  check_same_shape(ir.g->val(ir.id), io.g->val(io.id), "recon_loss");
  Var<T> d = sub(ir, io);
  return mean_all(mul(d, d));
}

}  // namespace srtod

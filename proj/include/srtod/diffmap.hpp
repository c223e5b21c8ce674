#pragma once

#include "srtod/fft.hpp"
#include "srtod/ops.hpp"

namespace srtod {

enum class DiffFlavor { kPixel, kHighFrequency };

struct HighPassConfig {
  double rho = 0.1;  // cutoff as a fraction of the max radial frequency

  void validate() const {
    if (rho < 0.0 || rho > 1.0)
      throw ConfigError("highpass cutoff rho must be in [0,1]");
  }
};

/// Non-negative per-pixel map {1,H,W} highlighting reconstruction error.
template <typename T>
struct DifferenceMap {
  Tensor<T> data;
  DiffFlavor flavor = DiffFlavor::kPixel;
};

/// Pixel difference map: channel mean of |I_r - I_o| (graph op).
template <typename T>
Var<T> pixel_diff_op(Var<T> ir, Var<T> io) {
  check_same_shape(ir.g->val(ir.id), io.g->val(io.id), "pixel_diff");
  return channel_mean(abs_op(sub(ir, io)));
}

/// High-frequency difference map: pixel difference of the high-passed
/// images (graph op).
template <typename T>
Var<T> highfreq_diff_op(Var<T> ir, Var<T> io, const HighPassConfig& cfg) {
  cfg.validate();
  check_same_shape(ir.g->val(ir.id), io.g->val(io.id), "highfreq_diff");
  return pixel_diff_op(highpass_op(ir, cfg.rho), highpass_op(io, cfg.rho));
}

/// Plain-tensor pixel difference for analysis and visualization.
template <typename T>
DifferenceMap<T> pixel_diff(const Tensor<T>& ir, const Tensor<T>& io) {
  check_same_shape(ir, io, "pixel_diff");
  const int C = ir.dim(0), H = ir.dim(1), W = ir.dim(2);
  DifferenceMap<T> out;
  out.flavor = DiffFlavor::kPixel;
  out.data = Tensor<T>({1, H, W});
  const size_t plane = size_t(H) * size_t(W);
  for (size_t i = 0; i < plane; ++i) {
    double acc = 0.0;
    for (int c = 0; c < C; ++c)
      acc += std::abs(double(ir.data[size_t(c) * plane + i]) -
                      double(io.data[size_t(c) * plane + i]));
    out.data.data[i] = T(acc / C);
  }
  return out;
}

template <typename T>
DifferenceMap<T> highfreq_diff(const Tensor<T>& ir, const Tensor<T>& io,
                               const HighPassConfig& cfg) {
  cfg.validate();
  check_same_shape(ir, io, "highfreq_diff");
  Tensor<T> hr = highpass_image(ir.template cast<double>(), cfg.rho).template cast<T>();
  Tensor<T> ho = highpass_image(io.template cast<double>(), cfg.rho).template cast<T>();
  DifferenceMap<T> out = pixel_diff(hr, ho);
  out.flavor = DiffFlavor::kHighFrequency;
  return out;
}

}  // namespace srtod

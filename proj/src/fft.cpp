#include "srtod/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <map>
#include <mutex>

namespace srtod {

namespace {

struct PlanPair {
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
};

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex g_plan_mutex;
std::map<std::pair<int, int>, PlanPair>& plan_cache() {
  static std::map<std::pair<int, int>, PlanPair> cache;
  return cache;
}

PlanPair get_plans(int H, int W, fftw_complex* buf_in, fftw_complex* buf_out) {
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto& cache = plan_cache();
  auto it = cache.find({H, W});
  if (it != cache.end()) return it->second;
  PlanPair p;
  p.fwd = fftw_plan_dft_2d(H, W, buf_in, buf_out, FFTW_FORWARD, FFTW_ESTIMATE);
  p.inv = fftw_plan_dft_2d(H, W, buf_in, buf_out, FFTW_BACKWARD, FFTW_ESTIMATE);
  cache.emplace(std::make_pair(H, W), p);
  return p;
}

Tensor<double> filter_image(const Tensor<double>& img, double rho, bool keep_high) {
  if (img.rank() != 3) throw ShapeError("filter_image: rank-3 input required");
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<double> out(img.shape);

  fftw_complex* buf = fftw_alloc_complex(size_t(H) * size_t(W));
  fftw_complex* spec = fftw_alloc_complex(size_t(H) * size_t(W));
  PlanPair plans = get_plans(H, W, buf, spec);

  const double half_diag = std::sqrt(0.25 * H * H + 0.25 * W * W);
  const double cutoff = rho * half_diag;
  const double scale = 1.0 / (double(H) * double(W));

  for (int c = 0; c < C; ++c) {
    const double* src = img.ptr() + size_t(c) * H * W;
    for (int i = 0; i < H * W; ++i) {
      buf[i][0] = src[i];
      buf[i][1] = 0.0;
    }
    fftw_execute_dft(plans.fwd, buf, spec);
    for (int u = 0; u < H; ++u) {
      const int fu = std::min(u, H - u);
      for (int v = 0; v < W; ++v) {
        const int fv = std::min(v, W - v);
        const double r = std::sqrt(double(fu) * fu + double(fv) * fv);
        const bool low = (r <= cutoff);
        const bool zero = keep_high ? low : !low;
        if (zero) {
          spec[u * W + v][0] = 0.0;
          spec[u * W + v][1] = 0.0;
        }
      }
    }
    fftw_execute_dft(plans.inv, spec, buf);
    double* dst = out.ptr() + size_t(c) * H * W;
    for (int i = 0; i < H * W; ++i) dst[i] = buf[i][0] * scale;
  }
  fftw_free(buf);
  fftw_free(spec);
  return out;
}

}  // namespace

Tensor<double> highpass_image(const Tensor<double>& img, double rho) {
  return filter_image(img, rho, /*keep_high=*/true);
}

Tensor<double> lowpass_image(const Tensor<double>& img, double rho) {
  return filter_image(img, rho, /*keep_high=*/false);
}

}  // namespace srtod

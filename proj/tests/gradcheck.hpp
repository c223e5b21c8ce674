#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "srtod/rng.hpp"
#include "srtod/tensor.hpp"

namespace srtod::testing {

struct FdReport {
  double max_rel_err = 0.0;
  int coords_checked = 0;
};

/// Central finite-difference check. `eval` must rebuild the forward pass
/// from the current contents of `inputs` and return the scalar output;
/// `analytic` holds the backprop gradients for the same tensors. A sampled
/// subset of coordinates per tensor keeps the runtime bounded.
inline FdReport finite_diff_check(const std::function<double()>& eval,
                                  const std::vector<Tensor<double>*>& inputs,
                                  const std::vector<Tensor<double>>& analytic,
                                  double h, int max_coords_per_tensor,
                                  uint64_t seed, double atol = 1e-9) {
  FdReport rep;
  Rng rng(seed);
  for (size_t t = 0; t < inputs.size(); ++t) {
    Tensor<double>& x = *inputs[t];
    const int64_t n = x.numel();
    std::vector<int64_t> coords;
    if (n <= max_coords_per_tensor) {
      for (int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int k = 0; k < max_coords_per_tensor; ++k)
        coords.push_back(rng.uniform_int(0, n - 1));
    }
    for (int64_t i : coords) {
      const double v = x.data[size_t(i)];
      x.data[size_t(i)] = v + h;
      const double fp = eval();
      x.data[size_t(i)] = v - h;
      const double fm = eval();
      x.data[size_t(i)] = v;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[t].data[size_t(i)];
      const double err = std::abs(fd - an);
      const double denom = std::max(std::abs(fd), std::abs(an));
      const double rel = err / std::max(denom, atol / 1e-4);
      if (err > atol) rep.max_rel_err = std::max(rep.max_rel_err, rel);
      ++rep.coords_checked;
    }
  }
  return rep;
}

}  // namespace srtod::testing

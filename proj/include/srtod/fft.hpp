#pragma once

#include "srtod/graph.hpp"

namespace srtod {

/// Ideal radial high-pass: per channel, 2-D DFT, zero every frequency bin
/// whose centered radial distance, normalized by the half-diagonal of the
/// spectrum, is <= rho, then inverse transform (real part). rho=0 removes
/// only the DC bin; rho=1 removes everything.
Tensor<double> highpass_image(const Tensor<double>& img, double rho);

/// Complementary low-pass (keeps the bins highpass removes).
Tensor<double> lowpass_image(const Tensor<double>& img, double rho);

/// Graph op for the high-pass filter. The filter is linear and self-adjoint
/// (real symmetric mask), so the backward pass applies the same filter to
/// the incoming gradient. FFT math runs in double regardless of T.
template <typename T>
Var<T> highpass_op(Var<T> x, double rho) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (xv.rank() != 3) throw ShapeError("highpass_op: rank-3 input required");
  Tensor<T> out = highpass_image(xv.template cast<double>(), rho).template cast<T>();
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T> gx = highpass_image(gy.template cast<double>(), rho).template cast<T>();
    gr.accum_grad(x.id, gx);
  });
  return {&g, id};
}

}  // namespace srtod

#pragma once

#include <Eigen/Core>
#include <memory>

#include "srtod/graph.hpp"

namespace srtod {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapCM = Eigen::Map<const MatRM<T>>;

/// im2col: {C,H,W} -> {C*K*K, Ho*Wo} for a KxK window, stride s, pad p.
template <typename T>
void im2col(const Tensor<T>& img, int K, int s, int p, Tensor<T>& cols) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int Ho = (H + 2 * p - K) / s + 1;
  const int Wo = (W + 2 * p - K) / s + 1;
  cols = Tensor<T>({C * K * K, Ho * Wo});
  T* dst = cols.ptr();
  const T* src = img.ptr();
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        T* row = dst + size_t((c * K + ky) * K + kx) * size_t(Ho * Wo);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < Wo; ++ox) row[oy * Wo + ox] = T(0);
            continue;
          }
          const T* srow = src + size_t(c * H + iy) * size_t(W);
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s - p + kx;
            row[oy * Wo + ox] = (ix < 0 || ix >= W) ? T(0) : srow[ix];
          }
        }
      }
    }
  }
}

/// col2im: scatter-add inverse of im2col.
template <typename T>
void col2im(const Tensor<T>& cols, int C, int H, int W, int K, int s, int p,
            Tensor<T>& img) {
  const int Ho = (H + 2 * p - K) / s + 1;
  const int Wo = (W + 2 * p - K) / s + 1;
  img = Tensor<T>({C, H, W});
  T* dst = img.ptr();
  const T* src = cols.ptr();
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        const T* row = src + size_t((c * K + ky) * K + kx) * size_t(Ho * Wo);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= H) continue;
          T* drow = dst + size_t(c * H + iy) * size_t(W);
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < W) drow[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

/// 2D convolution (cross-correlation). x {Ci,H,W}, w {Co,Ci,K,K}, b {Co}.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  const Tensor<T>& wv = g.val(w.id);
  if (xv.rank() != 3 || wv.rank() != 4)
    throw ShapeError("conv2d: expected rank-3 input and rank-4 weight");
  if (wv.dim(1) != xv.dim(0))
    throw ShapeError("conv2d: input channels " + std::to_string(xv.dim(0)) +
                     " != weight channels " + std::to_string(wv.dim(1)));
  const int Ci = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int Co = wv.dim(0), K = wv.dim(2);
  const int Ho = (H + 2 * pad - K) / stride + 1;
  const int Wo = (W + 2 * pad - K) / stride + 1;

  // 1x1 stride-1 convs skip the im2col copy.
  const bool direct = (K == 1 && stride == 1 && pad == 0);
  auto cols = std::make_shared<Tensor<T>>();
  if (!direct) im2col(xv, K, stride, pad, *cols);

  Tensor<T> out({Co, Ho, Wo});
  {
    MapCM<T> Wm(wv.ptr(), Co, Ci * K * K);
    MapCM<T> Cm(direct ? xv.ptr() : cols->ptr(), Ci * K * K, Ho * Wo);
    MapM<T> Om(out.ptr(), Co, Ho * Wo);
    Om.noalias() = Wm * Cm;
  }
  const Tensor<T>& bv = g.val(b.id);
  for (int co = 0; co < Co; ++co) {
    T* row = out.ptr() + size_t(co) * size_t(Ho * Wo);
    const T bias = bv[size_t(co)];
    for (int i = 0; i < Ho * Wo; ++i) row[i] += bias;
  }

  int id = g.add(std::move(out), {x.id, w.id, b.id},
                 [=](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(self);
    const Tensor<T>& xval = gr.val(x.id);
    const Tensor<T>& wval = gr.val(w.id);
    MapCM<T> Gy(gy.ptr(), Co, Ho * Wo);
    if (gr.wants_grad(b.id)) {
      Tensor<T>& gb = gr.grad(b.id);
      for (int co = 0; co < Co; ++co)
        gb[size_t(co)] += Gy.row(co).sum();
    }
    if (gr.wants_grad(w.id)) {
      Tensor<T>& gw = gr.grad(w.id);
      MapM<T> Gw(gw.ptr(), Co, Ci * K * K);
      MapCM<T> Cm(direct ? xval.ptr() : cols->ptr(), Ci * K * K, Ho * Wo);
      Gw.noalias() += Gy * Cm.transpose();
    }
    if (gr.wants_grad(x.id)) {
      MapCM<T> Wm(wval.ptr(), Co, Ci * K * K);
      if (direct) {
        Tensor<T>& gx = gr.grad(x.id);
        MapM<T> Gx(gx.ptr(), Ci, Ho * Wo);
        Gx.noalias() += Wm.transpose() * Gy;
      } else {
        Tensor<T> dcols({Ci * K * K, Ho * Wo});
        MapM<T> Dc(dcols.ptr(), Ci * K * K, Ho * Wo);
        Dc.noalias() = Wm.transpose() * Gy;
        Tensor<T> dx;
        col2im(dcols, Ci, H, W, K, stride, pad, dx);
        gr.accum_grad(x.id, dx);
      }
    }
  });
  return {&g, id};
}

/// Transposed 2D convolution. x {Ci,H,W}, w {Ci,Co,K,K}, b {Co};
/// output {Co, (H-1)*s - 2p + K, (W-1)*s - 2p + K}.
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  const Tensor<T>& wv = g.val(w.id);
  if (xv.rank() != 3 || wv.rank() != 4)
    throw ShapeError("conv_transpose2d: expected rank-3 input, rank-4 weight");
  if (wv.dim(0) != xv.dim(0))
    throw ShapeError("conv_transpose2d: channel mismatch");
  const int Ci = xv.dim(0), Hi = xv.dim(1), Wi = xv.dim(2);
  const int Co = wv.dim(1), K = wv.dim(2);
  const int Ho = (Hi - 1) * stride - 2 * pad + K;
  const int Wo = (Wi - 1) * stride - 2 * pad + K;

  Tensor<T> cols({Co * K * K, Hi * Wi});
  {
    MapCM<T> Wm(wv.ptr(), Ci, Co * K * K);
    MapCM<T> Xm(xv.ptr(), Ci, Hi * Wi);
    MapM<T> Cm(cols.ptr(), Co * K * K, Hi * Wi);
    Cm.noalias() = Wm.transpose() * Xm;
  }
  Tensor<T> out;
  col2im(cols, Co, Ho, Wo, K, stride, pad, out);
  const Tensor<T>& bv = g.val(b.id);
  for (int co = 0; co < Co; ++co) {
    T* row = out.ptr() + size_t(co) * size_t(Ho * Wo);
    const T bias = bv[size_t(co)];
    for (int i = 0; i < Ho * Wo; ++i) row[i] += bias;
  }

  int id = g.add(std::move(out), {x.id, w.id, b.id},
                 [=](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(self);
    const Tensor<T>& xval = gr.val(x.id);
    const Tensor<T>& wval = gr.val(w.id);
    if (gr.wants_grad(b.id)) {
      Tensor<T>& gb = gr.grad(b.id);
      for (int co = 0; co < Co; ++co) {
        const T* row = gy.ptr() + size_t(co) * size_t(Ho * Wo);
        T acc = T(0);
        for (int i = 0; i < Ho * Wo; ++i) acc += row[i];
        gb[size_t(co)] += acc;
      }
    }
    Tensor<T> gcols;
    im2col(gy, K, stride, pad, gcols);  // {Co*K*K, Hi*Wi}
    if (gr.wants_grad(w.id)) {
      Tensor<T>& gw = gr.grad(w.id);
      MapM<T> Gw(gw.ptr(), Ci, Co * K * K);
      MapCM<T> Xm(xval.ptr(), Ci, Hi * Wi);
      MapCM<T> Gc(gcols.ptr(), Co * K * K, Hi * Wi);
      Gw.noalias() += Xm * Gc.transpose();
    }
    if (gr.wants_grad(x.id)) {
      Tensor<T>& gx = gr.grad(x.id);
      MapM<T> Gx(gx.ptr(), Ci, Hi * Wi);
      MapCM<T> Wm(wval.ptr(), Ci, Co * K * K);
      MapCM<T> Gc(gcols.ptr(), Co * K * K, Hi * Wi);
      Gx.noalias() += Wm * Gc;
    }
  });
  return {&g, id};
}

}  // namespace srtod

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "srtod/graph.hpp"

namespace srtod {

// ---------------------------------------------------------------------------
// Elementwise (rank-agnostic)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> relu(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  Tensor<T> out(xv.shape);
  for (size_t i = 0; i < xv.data.size(); ++i)
    out.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(self);
    const Tensor<T>& xval = gr.val(x.id);
    if (!gr.wants_grad(x.id)) return;
    Tensor<T>& gx = gr.grad(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i)
      if (xval.data[i] > T(0)) gx.data[i] += gy.data[i];
  });
  return {&g, id};
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  Tensor<T> out(xv.shape);
  // Saturated values are nudged off 0/1 so the open-interval range holds
  // in finite precision.
  const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  const T lo = std::numeric_limits<T>::min();
  for (size_t i = 0; i < xv.data.size(); ++i) {
    const T v = xv.data[i];
    T y = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                    : T(1) - T(1) / (T(1) + std::exp(v));
    out.data[i] = y < lo ? lo : (y > hi ? hi : y);
  }
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(self);
    const Tensor<T>& yv = gr.val(self);
    if (!gr.wants_grad(x.id)) return;
    Tensor<T>& gx = gr.grad(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i)
      gx.data[i] += gy.data[i] * yv.data[i] * (T(1) - yv.data[i]);
  });
  return {&g, id};
}

template <typename T>
Var<T> abs_op(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  Tensor<T> out(xv.shape);
  for (size_t i = 0; i < xv.data.size(); ++i) out.data[i] = std::abs(xv.data[i]);
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(self);
    const Tensor<T>& xval = gr.val(x.id);
    if (!gr.wants_grad(x.id)) return;
    Tensor<T>& gx = gr.grad(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i) {
      const T s = xval.data[i] > T(0) ? T(1) : (xval.data[i] < T(0) ? T(-1) : T(0));
      gx.data[i] += gy.data[i] * s;
    }
  });
  return {&g, id};
}

namespace detail {
template <typename T, typename FwdFn, typename BwdFn>
Var<T> binary_same_shape(Var<T> a, Var<T> b, const char* name, FwdFn fwd, BwdFn bwd) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a.id);
  const Tensor<T>& bv = g.val(b.id);
  check_same_shape(av, bv, name);
  Tensor<T> out(av.shape);
  for (size_t i = 0; i < av.data.size(); ++i) out.data[i] = fwd(av.data[i], bv.data[i]);
  int id = g.add(std::move(out), {a.id, b.id}, [=](Graph<T>& gr, int self) {
    bwd(gr, self);
  });
  return {&g, id};
}
}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary_same_shape(a, b, "add",
      [](T x, T y) { return x + y; },
      [a, b](Graph<T>& gr, int self) {
        const Tensor<T>& gy = gr.grad(self);
        gr.accum_grad(a.id, gy);
        gr.accum_grad(b.id, gy);
      });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary_same_shape(a, b, "sub",
      [](T x, T y) { return x - y; },
      [a, b](Graph<T>& gr, int self) {
        const Tensor<T>& gy = gr.grad(self);
        gr.accum_grad(a.id, gy);
        if (gr.wants_grad(b.id)) {
          Tensor<T>& gb = gr.grad(b.id);
          for (size_t i = 0; i < gy.data.size(); ++i) gb.data[i] -= gy.data[i];
        }
      });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary_same_shape(a, b, "mul",
      [](T x, T y) { return x * y; },
      [a, b](Graph<T>& gr, int self) {
        const Tensor<T>& gy = gr.grad(self);
        const Tensor<T>& av = gr.val(a.id);
        const Tensor<T>& bv = gr.val(b.id);
        if (gr.wants_grad(a.id)) {
          Tensor<T>& ga = gr.grad(a.id);
          for (size_t i = 0; i < gy.data.size(); ++i)
            ga.data[i] += gy.data[i] * bv.data[i];
        }
        if (gr.wants_grad(b.id)) {
          Tensor<T>& gb = gr.grad(b.id);
          for (size_t i = 0; i < gy.data.size(); ++i)
            gb.data[i] += gy.data[i] * av.data[i];
        }
      });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T c) {
  Graph<T>& g = *x.g;
  Tensor<T> out = g.val(x.id);
  for (auto& v : out.data) v += c;
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    gr.accum_grad(x.id, gr.grad(self));
  });
  return {&g, id};
}

template <typename T>
Var<T> mul_scalar(Var<T> x, T c) {
  Graph<T>& g = *x.g;
  Tensor<T> out = g.val(x.id);
  for (auto& v : out.data) v *= c;
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T>& gx = gr.grad(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i] * c;
  });
  return {&g, id};
}

/// Identity with a new shape (same element count).
template <typename T>
Var<T> reshape(Var<T> x, std::vector<int> new_shape) {
  Graph<T>& g = *x.g;
  Tensor<T> out = g.val(x.id);
  int64_t n = 1;
  for (int d : new_shape) n *= d;
  if (n != out.numel()) throw ShapeError("reshape: element count mismatch");
  out.shape = std::move(new_shape);
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T>& gx = gr.grad(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
  });
  return {&g, id};
}

/// Cuts the gradient: value passes through, backward stops here.
template <typename T>
Var<T> stop_grad(Var<T> x) {
  Graph<T>& g = *x.g;
  int id = g.leaf(g.val(x.id), /*requires_grad=*/false);
  return {&g, id};
}

// ---------------------------------------------------------------------------
// Broadcast multiply over rank-3 shapes (dims equal or 1)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> bmul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a.id);
  const Tensor<T>& bv = g.val(b.id);
  if (av.rank() != 3 || bv.rank() != 3)
    throw ShapeError("bmul: rank-3 operands required");
  int os[3];
  for (int d = 0; d < 3; ++d) {
    int ad = av.dim(d), bd = bv.dim(d);
    if (ad != bd && ad != 1 && bd != 1)
      throw ShapeError("bmul: incompatible shapes " + av.shape_str() + " vs " + bv.shape_str());
    os[d] = std::max(ad, bd);
  }
  auto index = [](const Tensor<T>& t, int c, int y, int x) {
    const int tc = t.shape[0] == 1 ? 0 : c;
    const int ty = t.shape[1] == 1 ? 0 : y;
    const int tx = t.shape[2] == 1 ? 0 : x;
    return size_t((tc * t.shape[1] + ty) * t.shape[2] + tx);
  };
  Tensor<T> out({os[0], os[1], os[2]});
  size_t o = 0;
  for (int c = 0; c < os[0]; ++c)
    for (int y = 0; y < os[1]; ++y)
      for (int x = 0; x < os[2]; ++x, ++o)
        out.data[o] = av.data[index(av, c, y, x)] * bv.data[index(bv, c, y, x)];

  const int C = os[0], H = os[1], W = os[2];
  int id = g.add(std::move(out), {a.id, b.id}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(self);
    const Tensor<T>& aval = gr.val(a.id);
    const Tensor<T>& bval = gr.val(b.id);
    const bool wa = gr.wants_grad(a.id), wb = gr.wants_grad(b.id);
    if (!wa && !wb) return;
    Tensor<T>* ga = wa ? &gr.grad(a.id) : nullptr;
    Tensor<T>* gb = wb ? &gr.grad(b.id) : nullptr;
    size_t o2 = 0;
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x, ++o2) {
          const T gyv = gy.data[o2];
          if (wa) ga->data[index(aval, c, y, x)] += gyv * bval.data[index(bval, c, y, x)];
          if (wb) gb->data[index(bval, c, y, x)] += gyv * aval.data[index(aval, c, y, x)];
        }
  });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  double acc = 0.0;
  for (const T v : xv.data) acc += double(v);
  int id = g.add(Tensor<T>::scalar(T(acc)), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const T gy = gr.grad(self).data[0];
    Tensor<T>& gx = gr.grad(x.id);
    for (auto& v : gx.data) v += gy;
  });
  return {&g, id};
}

template <typename T>
Var<T> mean_all(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  const int64_t n = xv.numel();
  double acc = 0.0;
  for (const T v : xv.data) acc += double(v);
  int id = g.add(Tensor<T>::scalar(T(acc / double(n))), {x.id},
                 [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const T gy = gr.grad(self).data[0] / T(n);
    Tensor<T>& gx = gr.grad(x.id);
    for (auto& v : gx.data) v += gy;
  });
  return {&g, id};
}

/// Mean over the channel axis: {C,H,W} -> {1,H,W}.
template <typename T>
Var<T> channel_mean(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (xv.rank() != 3) throw ShapeError("channel_mean: rank-3 input required");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  Tensor<T> out({1, H, W});
  const size_t plane = size_t(H) * size_t(W);
  for (size_t i = 0; i < plane; ++i) {
    double acc = 0.0;
    for (int c = 0; c < C; ++c) acc += double(xv.data[size_t(c) * plane + i]);
    out.data[i] = T(acc / C);
  }
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T>& gx = gr.grad(x.id);
    for (int c = 0; c < C; ++c)
      for (size_t i = 0; i < plane; ++i)
        gx.data[size_t(c) * plane + i] += gy.data[i] / T(C);
  });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// Pooling and resize
// ---------------------------------------------------------------------------

/// Max pooling with window == stride (no padding).
template <typename T>
Var<T> maxpool2d(Var<T> x, int k) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (xv.rank() != 3) throw ShapeError("maxpool2d: rank-3 input required");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int Ho = H / k, Wo = W / k;
  if (Ho == 0 || Wo == 0) throw ShapeError("maxpool2d: window larger than input");
  Tensor<T> out({C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int>>(size_t(C) * Ho * Wo);
  size_t o = 0;
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox, ++o) {
        T best = xv.at(c, oy * k, ox * k);
        int besti = (c * H + oy * k) * W + ox * k;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) {
            const int iy = oy * k + dy, ix = ox * k + dx;
            const T v = xv.at(c, iy, ix);
            if (v > best) { best = v; besti = (c * H + iy) * W + ix; }
          }
        out.data[o] = best;
        (*argmax)[o] = besti;
      }
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T>& gx = gr.grad(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i)
      gx.data[size_t((*argmax)[i])] += gy.data[i];
  });
  return {&g, id};
}

/// Global average pool over spatial dims: {C,H,W} -> {C}.
template <typename T>
Var<T> global_avgpool(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (xv.rank() != 3) throw ShapeError("global_avgpool: rank-3 input required");
  const int C = xv.dim(0);
  const size_t plane = size_t(xv.dim(1)) * size_t(xv.dim(2));
  Tensor<T> out({C});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (size_t i = 0; i < plane; ++i) acc += double(xv.data[size_t(c) * plane + i]);
    out.data[size_t(c)] = T(acc / double(plane));
  }
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T>& gx = gr.grad(x.id);
    for (int c = 0; c < C; ++c) {
      const T gv = gy.data[size_t(c)] / T(plane);
      for (size_t i = 0; i < plane; ++i) gx.data[size_t(c) * plane + i] += gv;
    }
  });
  return {&g, id};
}

/// Global max pool over spatial dims: {C,H,W} -> {C}.
template <typename T>
Var<T> global_maxpool(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (xv.rank() != 3) throw ShapeError("global_maxpool: rank-3 input required");
  const int C = xv.dim(0);
  const size_t plane = size_t(xv.dim(1)) * size_t(xv.dim(2));
  Tensor<T> out({C});
  auto argmax = std::make_shared<std::vector<size_t>>(size_t(C));
  for (int c = 0; c < C; ++c) {
    size_t besti = size_t(c) * plane;
    T best = xv.data[besti];
    for (size_t i = 1; i < plane; ++i) {
      const T v = xv.data[size_t(c) * plane + i];
      if (v > best) { best = v; besti = size_t(c) * plane + i; }
    }
    out.data[size_t(c)] = best;
    (*argmax)[size_t(c)] = besti;
  }
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T>& gx = gr.grad(x.id);
    for (int c = 0; c < C; ++c) gx.data[(*argmax)[size_t(c)]] += gy.data[size_t(c)];
  });
  return {&g, id};
}

/// Nearest-neighbor 2x upsampling (FPN top-down path).
template <typename T>
Var<T> upsample_nearest2x(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (xv.rank() != 3) throw ShapeError("upsample_nearest2x: rank-3 input required");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  Tensor<T> out({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int x2 = 0; x2 < 2 * W; ++x2)
        out.at(c, y, x2) = xv.at(c, y / 2, x2 / 2);
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T>& gx = gr.grad(x.id);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int x2 = 0; x2 < 2 * W; ++x2)
          gx.at(c, y / 2, x2 / 2) += gy.at(c, y, x2);
  });
  return {&g, id};
}

/// Nearest-neighbor downscale by an integer factor (pixel-center sampling).
template <typename T>
Var<T> resize_nearest_down(Var<T> x, int f) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (xv.rank() != 3) throw ShapeError("resize_nearest_down: rank-3 input required");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  if (H % f != 0 || W % f != 0)
    throw ShapeError("resize_nearest_down: dims not divisible by factor");
  const int Ho = H / f, Wo = W / f, off = f / 2;
  Tensor<T> out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox)
        out.at(c, oy, ox) = xv.at(c, oy * f + off, ox * f + off);
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T>& gx = gr.grad(x.id);
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox)
          gx.at(c, oy * f + off, ox * f + off) += gy.at(c, oy, ox);
  });
  return {&g, id};
}

/// Bilinear downscale by an integer factor (align_corners=false sampling).
template <typename T>
Var<T> resize_bilinear_down(Var<T> x, int f) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (xv.rank() != 3) throw ShapeError("resize_bilinear_down: rank-3 input required");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  if (H % f != 0 || W % f != 0)
    throw ShapeError("resize_bilinear_down: dims not divisible by factor");
  const int Ho = H / f, Wo = W / f;
  auto coords = [f](int o, int limit, int& i0, int& i1, T& w1) {
    const double src = (o + 0.5) * f - 0.5;
    const double fl = std::floor(src);
    i0 = std::clamp(int(fl), 0, limit - 1);
    i1 = std::clamp(int(fl) + 1, 0, limit - 1);
    w1 = T(src - fl);
  };
  Tensor<T> out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy) {
      int y0, y1; T wy;
      coords(oy, H, y0, y1, wy);
      for (int ox = 0; ox < Wo; ++ox) {
        int x0, x1; T wx;
        coords(ox, W, x0, x1, wx);
        out.at(c, oy, ox) =
            (T(1) - wy) * ((T(1) - wx) * xv.at(c, y0, x0) + wx * xv.at(c, y0, x1)) +
            wy * ((T(1) - wx) * xv.at(c, y1, x0) + wx * xv.at(c, y1, x1));
      }
    }
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T>& gx = gr.grad(x.id);
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy) {
        int y0, y1; T wy;
        coords(oy, H, y0, y1, wy);
        for (int ox = 0; ox < Wo; ++ox) {
          int x0, x1; T wx;
          coords(ox, W, x0, x1, wx);
          const T gv = gy.at(c, oy, ox);
          gx.at(c, y0, x0) += gv * (T(1) - wy) * (T(1) - wx);
          gx.at(c, y0, x1) += gv * (T(1) - wy) * wx;
          gx.at(c, y1, x0) += gv * wy * (T(1) - wx);
          gx.at(c, y1, x1) += gv * wy * wx;
        }
      }
  });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// Linear layer, channel concat
// ---------------------------------------------------------------------------

/// Fully connected: x {I}, w {O,I}, b {O} -> {O}.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  const Tensor<T>& wv = g.val(w.id);
  if (xv.rank() != 1 || wv.rank() != 2 || wv.dim(1) != xv.dim(0))
    throw ShapeError("linear: shape mismatch");
  const int I = xv.dim(0), O = wv.dim(0);
  Tensor<T> out({O});
  for (int o = 0; o < O; ++o) {
    double acc = double(g.val(b.id)[size_t(o)]);
    const T* row = wv.ptr() + size_t(o) * size_t(I);
    for (int i = 0; i < I; ++i) acc += double(row[i]) * double(xv.data[size_t(i)]);
    out.data[size_t(o)] = T(acc);
  }
  int id = g.add(std::move(out), {x.id, w.id, b.id}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(self);
    const Tensor<T>& xval = gr.val(x.id);
    const Tensor<T>& wval = gr.val(w.id);
    if (gr.wants_grad(b.id)) {
      Tensor<T>& gb = gr.grad(b.id);
      for (int o = 0; o < O; ++o) gb.data[size_t(o)] += gy.data[size_t(o)];
    }
    if (gr.wants_grad(w.id)) {
      Tensor<T>& gw = gr.grad(w.id);
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i)
          gw.data[size_t(o) * size_t(I) + size_t(i)] +=
              gy.data[size_t(o)] * xval.data[size_t(i)];
    }
    if (gr.wants_grad(x.id)) {
      Tensor<T>& gx = gr.grad(x.id);
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i)
          gx.data[size_t(i)] +=
              gy.data[size_t(o)] * wval.data[size_t(o) * size_t(I) + size_t(i)];
    }
  });
  return {&g, id};
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a.id);
  const Tensor<T>& bv = g.val(b.id);
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(1) != bv.dim(1) ||
      av.dim(2) != bv.dim(2))
    throw ShapeError("concat_channels: spatial dims mismatch");
  const int Ca = av.dim(0), Cb = bv.dim(0), H = av.dim(1), W = av.dim(2);
  Tensor<T> out({Ca + Cb, H, W});
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.data.size());
  int id = g.add(std::move(out), {a.id, b.id}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(self);
    const size_t na = size_t(Ca) * H * W;
    if (gr.wants_grad(a.id)) {
      Tensor<T>& ga = gr.grad(a.id);
      for (size_t i = 0; i < na; ++i) ga.data[i] += gy.data[i];
    }
    if (gr.wants_grad(b.id)) {
      Tensor<T>& gb = gr.grad(b.id);
      for (size_t i = 0; i < size_t(Cb) * H * W; ++i) gb.data[i] += gy.data[na + i];
    }
  });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Optional per-channel statistics reported by norm layers during training
/// (used to maintain batch-norm running averages outside the graph).
template <typename T>
struct NormStats {
  std::vector<T> mean;     // per channel
  std::vector<T> mean_sq;  // per channel
};

/// Group normalization over {C,H,W}; groups must divide C. With
/// groups == C this is per-channel (instance) normalization, which is also
/// the single-sample training form of batch norm.
template <typename T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, T eps,
                  NormStats<T>* stats_out = nullptr) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (xv.rank() != 3) throw ShapeError("group_norm: rank-3 input required");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  if (C % groups != 0) throw ConfigError("group_norm: groups must divide channels");
  const int gs = C / groups;
  const size_t plane = size_t(H) * size_t(W);
  const size_t m = size_t(gs) * plane;

  auto xhat = std::make_shared<Tensor<T>>(xv.shape);
  auto inv_std = std::make_shared<std::vector<T>>(size_t(groups));
  Tensor<T> out(xv.shape);
  const Tensor<T>& ga = g.val(gamma.id);
  const Tensor<T>& be = g.val(beta.id);
  if (stats_out) {
    stats_out->mean.assign(size_t(C), T(0));
    stats_out->mean_sq.assign(size_t(C), T(0));
  }
  for (int gi = 0; gi < groups; ++gi) {
    const size_t base = size_t(gi) * m;
    double sum = 0.0, sumsq = 0.0;
    for (size_t i = 0; i < m; ++i) {
      const double v = double(xv.data[base + i]);
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / double(m);
    const double var = sumsq / double(m) - mean * mean;
    const T istd = T(1.0 / std::sqrt(var + double(eps)));
    (*inv_std)[size_t(gi)] = istd;
    for (int cc = 0; cc < gs; ++cc) {
      const int c = gi * gs + cc;
      for (size_t i = 0; i < plane; ++i) {
        const size_t idx = size_t(c) * plane + i;
        const T xh = (xv.data[idx] - T(mean)) * istd;
        (*xhat).data[idx] = xh;
        out.data[idx] = ga[size_t(c)] * xh + be[size_t(c)];
      }
    }
  }
  if (stats_out) {
    for (int c = 0; c < C; ++c) {
      double sum = 0.0, sumsq = 0.0;
      for (size_t i = 0; i < plane; ++i) {
        const double v = double(xv.data[size_t(c) * plane + i]);
        sum += v;
        sumsq += v * v;
      }
      stats_out->mean[size_t(c)] = T(sum / double(plane));
      stats_out->mean_sq[size_t(c)] = T(sumsq / double(plane));
    }
  }

  int id = g.add(std::move(out), {x.id, gamma.id, beta.id},
                 [=](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(self);
    const Tensor<T>& gav = gr.val(gamma.id);
    if (gr.wants_grad(beta.id)) {
      Tensor<T>& gb = gr.grad(beta.id);
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (size_t i = 0; i < plane; ++i) acc += double(gy.data[size_t(c) * plane + i]);
        gb[size_t(c)] += T(acc);
      }
    }
    if (gr.wants_grad(gamma.id)) {
      Tensor<T>& gg = gr.grad(gamma.id);
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (size_t i = 0; i < plane; ++i) {
          const size_t idx = size_t(c) * plane + i;
          acc += double(gy.data[idx]) * double((*xhat).data[idx]);
        }
        gg[size_t(c)] += T(acc);
      }
    }
    if (gr.wants_grad(x.id)) {
      Tensor<T>& gx = gr.grad(x.id);
      for (int gi = 0; gi < groups; ++gi) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int cc = 0; cc < gs; ++cc) {
          const int c = gi * gs + cc;
          for (size_t i = 0; i < plane; ++i) {
            const size_t idx = size_t(c) * plane + i;
            const double dxh = double(gy.data[idx]) * double(gav[size_t(c)]);
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * double((*xhat).data[idx]);
          }
        }
        const double istd = double((*inv_std)[size_t(gi)]);
        for (int cc = 0; cc < gs; ++cc) {
          const int c = gi * gs + cc;
          for (size_t i = 0; i < plane; ++i) {
            const size_t idx = size_t(c) * plane + i;
            const double dxh = double(gy.data[idx]) * double(gav[size_t(c)]);
            gx.data[idx] += T(istd * (dxh - sum_dxhat / double(m) -
                                      double((*xhat).data[idx]) * sum_dxhat_xhat / double(m)));
          }
        }
      }
    }
  });
  return {&g, id};
}

/// Per-channel affine with constant (non-learned) scale/shift; used for
/// batch-norm inference with running statistics.
template <typename T>
Var<T> affine_channel_const(Var<T> x, const std::vector<T>& scale,
                            const std::vector<T>& shift) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.val(x.id);
  if (xv.rank() != 3) throw ShapeError("affine_channel_const: rank-3 input required");
  const int C = xv.dim(0);
  const size_t plane = size_t(xv.dim(1)) * size_t(xv.dim(2));
  Tensor<T> out(xv.shape);
  for (int c = 0; c < C; ++c)
    for (size_t i = 0; i < plane; ++i)
      out.data[size_t(c) * plane + i] = xv.data[size_t(c) * plane + i] * scale[size_t(c)] + shift[size_t(c)];
  auto sc = std::make_shared<std::vector<T>>(scale);
  int id = g.add(std::move(out), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(x.id)) return;
    const Tensor<T>& gy = gr.grad(self);
    Tensor<T>& gx = gr.grad(x.id);
    for (int c = 0; c < C; ++c)
      for (size_t i = 0; i < plane; ++i)
        gx.data[size_t(c) * plane + i] += gy.data[size_t(c) * plane + i] * (*sc)[size_t(c)];
  });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// Binary threshold with straight-through surrogate
// ---------------------------------------------------------------------------

/// Hard forward: out = 1 if d > t else 0 (strict inequality, exactly binary).
/// Backward uses the logistic surrogate sigmoid((d - t)/tau) for both d and
/// the scalar threshold t. With soft_forward=true the forward pass itself is
/// the surrogate; that mode makes the op differentiable end-to-end so the
/// backward implementation can be validated by finite differences.
template <typename T>
Var<T> hard_threshold_ste(Var<T> d, Var<T> t, T tau, bool soft_forward = false) {
  Graph<T>& g = *d.g;
  const Tensor<T>& dv = g.val(d.id);
  const Tensor<T>& tv = g.val(t.id);
  if (tv.numel() != 1) throw ShapeError("hard_threshold_ste: t must be scalar");
  if (tau <= T(0)) throw ConfigError("hard_threshold_ste: tau must be positive");
  const T tval = tv.data[0];
  Tensor<T> out(dv.shape);
  auto surr = std::make_shared<Tensor<T>>(dv.shape);
  for (size_t i = 0; i < dv.data.size(); ++i) {
    const T z = (dv.data[i] - tval) / tau;
    const T s = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                          : T(1) - T(1) / (T(1) + std::exp(z));
    (*surr).data[i] = s;
    out.data[i] = soft_forward ? s : (dv.data[i] > tval ? T(1) : T(0));
  }
  int id = g.add(std::move(out), {d.id, t.id}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(self);
    const bool wd = gr.wants_grad(d.id), wt = gr.wants_grad(t.id);
    if (!wd && !wt) return;
    double gt_acc = 0.0;
    Tensor<T>* gd = wd ? &gr.grad(d.id) : nullptr;
    for (size_t i = 0; i < gy.data.size(); ++i) {
      const T s = (*surr).data[i];
      const T ds = s * (T(1) - s) / tau;
      if (wd) gd->data[i] += gy.data[i] * ds;
      if (wt) gt_acc -= double(gy.data[i] * ds);
    }
    if (wt) gr.grad(t.id).data[0] += T(gt_acc);
  });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Sigmoid focal loss over flattened logits. targets in {0,1}; weight 0
/// excludes an element (ignored anchors). Result = sum(FL_i * weight_i) / norm.
template <typename T>
Var<T> sigmoid_focal_loss(Var<T> logits, const Tensor<T>& targets,
                          const Tensor<T>& weights, T alpha, T gamma, T norm) {
  Graph<T>& g = *logits.g;
  const Tensor<T>& xv = g.val(logits.id);
  check_same_shape(xv, targets, "sigmoid_focal_loss/targets");
  check_same_shape(xv, weights, "sigmoid_focal_loss/weights");
  auto tgt = std::make_shared<Tensor<T>>(targets);
  auto wgt = std::make_shared<Tensor<T>>(weights);

  auto softplus = [](double z) {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  };
  double acc = 0.0;
  for (size_t i = 0; i < xv.data.size(); ++i) {
    if ((*wgt).data[i] == T(0)) continue;
    const double x = double(xv.data[i]);
    const double p = 1.0 / (1.0 + std::exp(-x));
    const double logp = -softplus(-x);
    const double log1mp = -softplus(x);
    double fl;
    if ((*tgt).data[i] > T(0.5))
      fl = -double(alpha) * std::pow(1.0 - p, double(gamma)) * logp;
    else
      fl = -(1.0 - double(alpha)) * std::pow(p, double(gamma)) * log1mp;
    acc += fl * double((*wgt).data[i]);
  }
  Tensor<T> out = Tensor<T>::scalar(T(acc / double(norm)));

  int id = g.add(std::move(out), {logits.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(logits.id)) return;
    const T gy = gr.grad(self).data[0];
    const Tensor<T>& xval = gr.val(logits.id);
    Tensor<T>& gx = gr.grad(logits.id);
    for (size_t i = 0; i < xval.data.size(); ++i) {
      if ((*wgt).data[i] == T(0)) continue;
      const double x = double(xval.data[i]);
      const double p = 1.0 / (1.0 + std::exp(-x));
      double dfl;
      if ((*tgt).data[i] > T(0.5)) {
        const double logp = x > 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
        dfl = double(alpha) * (double(gamma) * p * std::pow(1.0 - p, double(gamma)) * logp -
                               std::pow(1.0 - p, double(gamma) + 1.0));
      } else {
        const double log1mp = x > 0 ? -x - std::log1p(std::exp(-x)) : -std::log1p(std::exp(x));
        dfl = (1.0 - double(alpha)) * (std::pow(p, double(gamma) + 1.0) -
                                       double(gamma) * (1.0 - p) * std::pow(p, double(gamma)) * log1mp);
      }
      gx.data[i] += gy * T(dfl * double((*wgt).data[i]) / double(norm));
    }
  });
  return {&g, id};
}

/// Masked L1: sum(|pred - target| * weight) / norm.
template <typename T>
Var<T> l1_loss_masked(Var<T> pred, const Tensor<T>& target,
                      const Tensor<T>& weights, T norm) {
  Graph<T>& g = *pred.g;
  const Tensor<T>& pv = g.val(pred.id);
  check_same_shape(pv, target, "l1_loss_masked/target");
  check_same_shape(pv, weights, "l1_loss_masked/weights");
  auto tgt = std::make_shared<Tensor<T>>(target);
  auto wgt = std::make_shared<Tensor<T>>(weights);
  double acc = 0.0;
  for (size_t i = 0; i < pv.data.size(); ++i)
    acc += double(std::abs(pv.data[i] - (*tgt).data[i])) * double((*wgt).data[i]);
  Tensor<T> out = Tensor<T>::scalar(T(acc / double(norm)));
  int id = g.add(std::move(out), {pred.id}, [=](Graph<T>& gr, int self) {
    if (!gr.wants_grad(pred.id)) return;
    const T gy = gr.grad(self).data[0];
    const Tensor<T>& pval = gr.val(pred.id);
    Tensor<T>& gp = gr.grad(pred.id);
    for (size_t i = 0; i < pval.data.size(); ++i) {
      const T diff = pval.data[i] - (*tgt).data[i];
      const T s = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
      gp.data[i] += gy * s * (*wgt).data[i] / norm;
    }
  });
  return {&g, id};
}

}  // namespace srtod

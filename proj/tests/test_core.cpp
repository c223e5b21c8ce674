#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "srtod/conv.hpp"
#include "srtod/fft.hpp"
#include "srtod/ops.hpp"

#include "gradcheck.hpp"

using namespace srtod;
using namespace srtod::testing;

namespace {

using D = double;

Tensor<D> randn(std::vector<int> shape, uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return Tensor<D>::randn(std::move(shape), rng, stddev);
}

/// FD-checks a graph builder against its own backward pass.
void check_op(const std::function<Var<D>(Graph<D>&, std::vector<Var<D>>&)>& build,
              std::vector<Tensor<D>>& tensors, double tol = 1e-6,
              int max_coords = 40, uint64_t seed = 7) {
  auto eval = [&]() {
    Graph<D> g;
    std::vector<Var<D>> vars;
    for (auto& t : tensors) vars.push_back({&g, g.leaf(t, true)});
    return build(g, vars).val().data[0];
  };
  // analytic gradients
  std::vector<Tensor<D>> analytic;
  {
    Graph<D> g;
    std::vector<Var<D>> vars;
    for (auto& t : tensors) vars.push_back({&g, g.leaf(t, true)});
    Var<D> loss = build(g, vars);
    g.backward(loss.id);
    for (auto& v : vars) analytic.push_back(g.grad_of(v.id));
  }
  std::vector<Tensor<D>*> ptrs;
  for (auto& t : tensors) ptrs.push_back(&t);
  FdReport rep = finite_diff_check(eval, ptrs, analytic, 1e-5, max_coords, seed);
  CHECK(rep.coords_checked > 0);
  CHECK(rep.max_rel_err < tol);
}

}  // namespace

TEST_CASE("conv2d forward matches direct summation") {
  Graph<D> g;
  Tensor<D> x = randn({2, 5, 6}, 11);
  Tensor<D> w = randn({3, 2, 3, 3}, 12, 0.3);
  Tensor<D> b = randn({3}, 13, 0.1);
  Var<D> vx{&g, g.leaf(x)};
  Var<D> vw{&g, g.leaf(w)};
  Var<D> vb{&g, g.leaf(b)};
  Var<D> y = conv2d(vx, vw, vb, 1, 1);
  REQUIRE(y.shape() == std::vector<int>({3, 5, 6}));
  for (int co = 0; co < 3; ++co)
    for (int oy = 0; oy < 5; ++oy)
      for (int ox = 0; ox < 6; ++ox) {
        double acc = b[size_t(co)];
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy - 1 + ky, ix = ox - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
              acc += w.data[size_t(((co * 2 + ci) * 3 + ky) * 3 + kx)] * x.at(ci, iy, ix);
            }
        CHECK(y.val().at(co, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("conv2d gradients (stride 1 and 2, incl 1x1)") {
  for (auto [k, s, p] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 1, 0}, {4, 2, 1}}) {
    std::vector<Tensor<D>> ts = {randn({3, 8, 8}, 21), randn({4, 3, k, k}, 22, 0.3),
                                 randn({4}, 23, 0.1)};
    check_op(
        [k2 = k, s2 = s, p2 = p](Graph<D>& g, std::vector<Var<D>>& v) {
          (void)k2;
          Var<D> y = conv2d(v[0], v[1], v[2], s2, p2);
          return mean_all(mul(y, y));
        },
        ts);
  }
}

TEST_CASE("conv_transpose2d shape doubling and gradients") {
  std::vector<Tensor<D>> ts = {randn({4, 5, 7}, 31), randn({4, 2, 4, 4}, 32, 0.3),
                               randn({2}, 33, 0.1)};
  {
    Graph<D> g;
    Var<D> x{&g, g.leaf(ts[0])};
    Var<D> w{&g, g.leaf(ts[1])};
    Var<D> b{&g, g.leaf(ts[2])};
    Var<D> y = conv_transpose2d(x, w, b, 2, 1);
    CHECK(y.shape() == std::vector<int>({2, 10, 14}));
  }
  check_op(
      [](Graph<D>& g, std::vector<Var<D>>& v) {
        Var<D> y = conv_transpose2d(v[0], v[1], v[2], 2, 1);
        return mean_all(mul(y, y));
      },
      ts);
}

TEST_CASE("elementwise / reduction gradients") {
  std::vector<Tensor<D>> ts = {randn({3, 4, 5}, 41), randn({3, 4, 5}, 42)};
  check_op(
      [](Graph<D>& g, std::vector<Var<D>>& v) {
        Var<D> y = relu(add(v[0], mul_scalar(v[1], D(0.7))));
        y = sigmoid(y);
        y = abs_op(sub(y, v[1]));
        return mean_all(y);
      },
      ts);
  check_op(
      [](Graph<D>& g, std::vector<Var<D>>& v) {
        return mul_scalar(sum_all(channel_mean(mul(v[0], v[1]))), D(0.1));
      },
      ts);
}

TEST_CASE("broadcast multiply matches explicit loops and gradients") {
  Tensor<D> wc = randn({4, 1, 1}, 51);
  Tensor<D> f = randn({1, 3, 5}, 52);
  Tensor<D> p = randn({4, 3, 5}, 53);
  {
    Graph<D> g;
    Var<D> vw{&g, g.leaf(wc)};
    Var<D> vf{&g, g.leaf(f)};
    Var<D> vp{&g, g.leaf(p)};
    Var<D> y = bmul(bmul(vw, vf), vp);
    for (int c = 0; c < 4; ++c)
      for (int yy = 0; yy < 3; ++yy)
        for (int xx = 0; xx < 5; ++xx)
          CHECK(y.val().at(c, yy, xx) ==
                wc.at(c, 0, 0) * f.at(0, yy, xx) * p.at(c, yy, xx));
  }
  std::vector<Tensor<D>> ts = {wc, f, p};
  check_op(
      [](Graph<D>& g, std::vector<Var<D>>& v) {
        return mean_all(bmul(bmul(v[0], v[1]), v[2]));
      },
      ts);
}

TEST_CASE("pooling and resize gradients") {
  std::vector<Tensor<D>> ts = {randn({3, 8, 8}, 61)};
  check_op([](Graph<D>& g, std::vector<Var<D>>& v) {
    return mean_all(mul(maxpool2d(v[0], 2), maxpool2d(v[0], 2)));
  }, ts);
  check_op([](Graph<D>& g, std::vector<Var<D>>& v) {
    Var<D> a = reshape(global_avgpool(v[0]), {3, 1, 1});
    Var<D> m = reshape(global_maxpool(v[0]), {3, 1, 1});
    return sum_all(mul(a, m));
  }, ts);
  check_op([](Graph<D>& g, std::vector<Var<D>>& v) {
    return mean_all(mul(upsample_nearest2x(v[0]), upsample_nearest2x(v[0])));
  }, ts);
  check_op([](Graph<D>& g, std::vector<Var<D>>& v) {
    Var<D> y = resize_nearest_down(v[0], 4);
    return mean_all(mul(y, y));
  }, ts);
  check_op([](Graph<D>& g, std::vector<Var<D>>& v) {
    Var<D> y = resize_bilinear_down(v[0], 4);
    return mean_all(mul(y, y));
  }, ts);
}

TEST_CASE("group norm normalizes and backprops") {
  std::vector<Tensor<D>> ts = {randn({8, 4, 4}, 71), randn({8}, 72, 0.5),
                               randn({8}, 73, 0.5)};
  {
    Graph<D> g;
    Var<D> x{&g, g.leaf(ts[0])};
    Var<D> ones{&g, g.leaf(Tensor<D>::full({8}, 1.0))};
    Var<D> zeros{&g, g.leaf(Tensor<D>({8}))};
    Var<D> y = group_norm(x, ones, zeros, 4, D(1e-5));
    // per-group mean ~0, var ~1
    for (int grp = 0; grp < 4; ++grp) {
      double sum = 0, sumsq = 0;
      for (int c = grp * 2; c < grp * 2 + 2; ++c)
        for (int yy = 0; yy < 4; ++yy)
          for (int xx = 0; xx < 4; ++xx) {
            sum += y.val().at(c, yy, xx);
            sumsq += y.val().at(c, yy, xx) * y.val().at(c, yy, xx);
          }
      CHECK(std::abs(sum / 32.0) < 1e-10);
      CHECK(sumsq / 32.0 == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
  check_op(
      [](Graph<D>& g, std::vector<Var<D>>& v) {
        Var<D> y = group_norm(v[0], v[1], v[2], 4, D(1e-5));
        return mean_all(mul(y, y));
      },
      ts, 1e-5);
}

TEST_CASE("linear and concat gradients") {
  std::vector<Tensor<D>> ts = {randn({6}, 81), randn({4, 6}, 82, 0.4),
                               randn({4}, 83, 0.2)};
  check_op(
      [](Graph<D>& g, std::vector<Var<D>>& v) {
        Var<D> y = relu(linear(v[0], v[1], v[2]));
        return sum_all(mul(y, y));
      },
      ts);
  std::vector<Tensor<D>> tc = {randn({2, 3, 4}, 84), randn({1, 3, 4}, 85)};
  check_op(
      [](Graph<D>& g, std::vector<Var<D>>& v) {
        Var<D> y = concat_channels(v[0], v[1]);
        return mean_all(mul(y, y));
      },
      tc);
}

TEST_CASE("hard threshold: binary forward, surrogate backward") {
  Tensor<D> d = randn({1, 6, 6}, 91, 0.3);
  Tensor<D> t = Tensor<D>::scalar(0.1);
  {
    Graph<D> g;
    Var<D> vd{&g, g.leaf(d)};
    Var<D> vt{&g, g.leaf(t)};
    Var<D> y = hard_threshold_ste(vd, vt, D(0.05));
    for (size_t i = 0; i < y.val().data.size(); ++i) {
      const double expect = d.data[i] > 0.1 ? 1.0 : 0.0;
      CHECK(y.val().data[i] == expect);
    }
  }
  // soft-forward mode is differentiable end to end
  std::vector<Tensor<D>> ts = {d, t};
  check_op(
      [](Graph<D>& g, std::vector<Var<D>>& v) {
        Var<D> y = hard_threshold_ste(v[0], v[1], D(0.05), /*soft_forward=*/true);
        return mean_all(mul(y, y));
      },
      ts, 1e-5);
}

TEST_CASE("focal and L1 loss gradients") {
  Tensor<D> logits = randn({2, 4, 4}, 101, 1.5);
  Tensor<D> targets({2, 4, 4});
  Tensor<D> weights = Tensor<D>::full({2, 4, 4}, 1.0);
  Rng rng(102);
  for (auto& v : targets.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  weights.data[3] = 0.0;  // one ignored element
  std::vector<Tensor<D>> ts = {logits};
  check_op(
      [&](Graph<D>& g, std::vector<Var<D>>& v) {
        return sigmoid_focal_loss(v[0], targets, weights, D(0.25), D(2.0), D(5.0));
      },
      ts, 1e-5, 32);
  Tensor<D> target2 = randn({2, 4, 4}, 103);
  check_op(
      [&](Graph<D>& g, std::vector<Var<D>>& v) {
        return l1_loss_masked(v[0], target2, weights, D(3.0));
      },
      ts, 1e-5, 32);
}

TEST_CASE("focal loss zero-weight elements contribute nothing") {
  Graph<D> g;
  Tensor<D> logits = randn({4}, 111);
  Tensor<D> tgt({4});
  Tensor<D> w0 = Tensor<D>::full({4}, 1.0);
  Tensor<D> w1 = w0;
  w1.data[2] = 0.0;
  Var<D> a{&g, g.leaf(logits)};
  Var<D> l_full = sigmoid_focal_loss(a, tgt, w0, D(0.25), D(2.0), D(1.0));
  Var<D> l_masked = sigmoid_focal_loss(a, tgt, w1, D(0.25), D(2.0), D(1.0));
  CHECK(l_masked.val().data[0] < l_full.val().data[0]);
}

TEST_CASE("highpass op backward is the filter itself (self-adjoint)") {
  // <A x, y> == <x, A y> for the linear high-pass operator.
  Rng rng(121);
  Tensor<D> x = Tensor<D>::randn({1, 12, 10}, rng);
  Tensor<D> y = Tensor<D>::randn({1, 12, 10}, rng);
  Tensor<D> ax = highpass_image(x, 0.2);
  Tensor<D> ay = highpass_image(y, 0.2);
  double lhs = 0, rhs = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    lhs += ax.data[i] * y.data[i];
    rhs += x.data[i] * ay.data[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));

  std::vector<Tensor<D>> ts = {x};
  check_op(
      [](Graph<D>& g, std::vector<Var<D>>& v) {
        Var<D> h = highpass_op(v[0], 0.2);
        return mean_all(mul(h, h));
      },
      ts, 1e-5);
}

TEST_CASE("graph reuses a parameter leaf and accumulates its grad") {
  Graph<D> g;
  Tensor<D> w = randn({3}, 131);
  int id1 = g.leaf_ref(&w, true);
  int id2 = g.leaf_ref(&w, true);
  CHECK(id1 == id2);
  Var<D> vw{&g, id1};
  Var<D> y = sum_all(mul(vw, vw));
  g.backward(y.id);
  for (int i = 0; i < 3; ++i)
    CHECK(g.grad_of(id1).data[size_t(i)] == doctest::Approx(2.0 * w.data[size_t(i)]));
}

TEST_CASE("shape errors are reported, not silently padded") {
  Graph<D> g;
  Var<D> a{&g, g.leaf(randn({2, 3, 3}, 141))};
  Var<D> b{&g, g.leaf(randn({2, 3, 4}, 142))};
  CHECK_THROWS_AS((void)add(a, b), ShapeError);
  CHECK_THROWS_AS((void)maxpool2d(Var<D>{&g, g.leaf(randn({3}, 143))}, 2), ShapeError);
}

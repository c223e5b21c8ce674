#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "srtod/dgfe.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace srtod;
using namespace srtod::testing;

namespace {

template <typename T>
Tensor<T> randu(std::vector<int> shape, uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  return Tensor<T>::rand_uniform(std::move(shape), rng, lo, hi);
}

Dgfe<double> make_dgfe(ParamStore<double>& store, DgfeConfig cfg = {}, int channels = 8) {
  cfg.reduction = 4;
  return Dgfe<double>(store, channels, cfg);
}

}  // namespace

TEST_CASE("filtration: all-below gives F=1, all-above gives F=2") {
  ParamStore<double> store(1);
  auto dgfe = make_dgfe(store);  // t = 0.1
  Graph<double> g;
  Var<double> low{&g, g.leaf(Tensor<double>::full({1, 16, 16}, 0.05))};
  Var<double> f1 = dgfe.filtration(g, low, 4);
  CHECK(f1.shape() == std::vector<int>({1, 4, 4}));
  for (double v : f1.val().data) CHECK(v == 1.0);

  Var<double> high{&g, g.leaf(Tensor<double>::full({1, 16, 16}, 0.9))};
  Var<double> f2 = dgfe.filtration(g, high, 4);
  for (double v : f2.val().data) CHECK(v == 2.0);
}

TEST_CASE("one above-threshold pixel in one 4x4 window marks exactly one cell") {
  ParamStore<double> store(2);
  auto dgfe = make_dgfe(store);
  Tensor<double> d = Tensor<double>::full({1, 16, 16}, 0.02);
  d.at(0, 6, 9) = 0.5;  // window (1,2)
  Graph<double> g;
  Var<double> f = dgfe.filtration(g, {&g, g.leaf(d)}, 4);
  int twos = 0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      if (f.val().at(0, y, x) == 2.0) ++twos;
      else CHECK(f.val().at(0, y, x) == 1.0);
    }
  CHECK(twos == 1);
  CHECK(f.val().at(0, 1, 2) == 2.0);
}

TEST_CASE("filtration entries are exactly {1,2} under maxpool and nearest") {
  for (auto mode : {ResizeMode::kMaxpool, ResizeMode::kNearest}) {
    ParamStore<double> store(3);
    DgfeConfig cfg;
    cfg.resize = mode;
    auto dgfe = make_dgfe(store, cfg);
    Graph<double> g;
    Var<double> d{&g, g.leaf(randu<double>({1, 32, 32}, 17))};
    Var<double> f = dgfe.filtration(g, d, 4);
    for (double v : f.val().data) CHECK((v == 1.0 || v == 2.0));
  }
}

TEST_CASE("raising t never enlarges the activated set (maxpool resize)") {
  Tensor<double> d = randu<double>({1, 32, 32}, 23);
  auto count_active = [&](double t) {
    ParamStore<double> store(5);
    DgfeConfig cfg;
    cfg.threshold = ThresholdMode::kFixed;
    cfg.threshold_init = t;
    auto dgfe = make_dgfe(store, cfg);
    Graph<double> g;
    Var<double> f = dgfe.filtration(g, {&g, g.leaf(d)}, 4);
    int n = 0;
    for (double v : f.val().data) n += (v == 2.0);
    return n;
  };
  int prev = count_active(0.0);
  for (double t : {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
    const int n = count_active(t);
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("filtration shape errors") {
  ParamStore<double> store(6);
  auto dgfe = make_dgfe(store);
  Graph<double> g;
  Var<double> bad{&g, g.leaf(randu<double>({1, 18, 16}, 29))};
  CHECK_THROWS_AS((void)dgfe.filtration(g, bad, 4), ShapeError);
  Var<double> bad2{&g, g.leaf(randu<double>({2, 16, 16}, 29))};
  CHECK_THROWS_AS((void)dgfe.filtration(g, bad2, 4), ShapeError);
}

TEST_CASE("surrogate filtration path passes finite differences (float64)") {
  // soft-forward mode: the hard step is replaced by its logistic surrogate,
  // making forward == the function the backward pass differentiates.
  ParamStore<double> store(7);
  auto dgfe = make_dgfe(store);
  Param<double>* t = dgfe.threshold_param();
  Tensor<double> d = randu<double>({1, 16, 16}, 31);
  Tensor<double> p2 = randu<double>({8, 4, 4}, 32, -1.0, 1.0);

  auto build = [&](Graph<double>& g) {
    Var<double> vd{&g, g.leaf_ref(&d, true)};
    Var<double> vp{&g, g.leaf_ref(&p2, true)};
    Var<double> out = dgfe.enhance(g, vp, vd, 4, /*soft_forward=*/true);
    return mean_all(mul(out, out));
  };
  auto eval = [&]() {
    Graph<double> g;
    return build(g).val().data[0];
  };
  std::vector<Tensor<double>*> inputs = {&d, &p2, &t->value};
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    Var<double> loss = build(g);
    g.backward(loss.id);
    analytic.push_back(g.grad_of(g.find_leaf(&d)));
    analytic.push_back(g.grad_of(g.find_leaf(&p2)));
    analytic.push_back(g.grad_of(g.find_leaf(&t->value)));
    for (const auto& p : store.all()) {
      if (p.get() == t) continue;
      inputs.push_back(&p->value);
      const int id = g.find_leaf(&p->value);
      analytic.push_back(id >= 0 ? g.grad_of(id) : Tensor<double>(p->value.shape));
    }
  }
  auto rep = finite_diff_check(eval, inputs, analytic, 1e-6, 12, 37, 1e-8);
  CHECK(rep.coords_checked > 40);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("hard filtration still routes surrogate gradients to D and t") {
  ParamStore<double> store(8);
  auto dgfe = make_dgfe(store);
  Tensor<double> d = randu<double>({1, 16, 16}, 41);
  Graph<double> g;
  Var<double> vd{&g, g.leaf(d, true)};
  Var<double> f = dgfe.filtration(g, vd, 4);  // hard forward
  g.backward(mean_all(mul(f, f)).id);
  double dn = 0, tn = 0;
  for (double v : g.grad_of(vd.id).data) dn += v * v;
  for (double v : g.grad_of(g.find_leaf(&dgfe.threshold_param()->value)).data) tn += v * v;
  CHECK(dn > 0.0);
  CHECK(tn > 0.0);
}

TEST_CASE("reweight: zero MLP gives w = 0.5 per channel") {
  ParamStore<double> store(9);
  auto dgfe = make_dgfe(store);
  for (const auto& p : store.all())
    if (p->name.rfind("dgfe.mlp", 0) == 0)
      for (auto& v : p->value.data) v = 0.0;
  Graph<double> g;
  Var<double> p2{&g, g.leaf(randu<double>({8, 6, 6}, 43))};
  Var<double> w = dgfe.reweight(g, p2);
  REQUIRE(w.shape() == std::vector<int>({8}));
  for (double v : w.val().data) CHECK(v == 0.5);
}

TEST_CASE("reweight is invariant to spatial permutations") {
  ParamStore<double> store(10);
  auto dgfe = make_dgfe(store);
  Tensor<double> p2 = randu<double>({8, 4, 4}, 47);
  Tensor<double> perm = p2;
  // rotate the spatial plane by one pixel (a permutation)
  for (int c = 0; c < 8; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        perm.at(c, y, x) = p2.at(c, (y + 1) % 4, (x + 2) % 4);
  Graph<double> g;
  Var<double> w1 = dgfe.reweight(g, {&g, g.leaf(p2)});
  Var<double> w2 = dgfe.reweight(g, {&g, g.leaf(perm)});
  for (int c = 0; c < 8; ++c)
    CHECK(w1.val().data[size_t(c)] == doctest::Approx(w2.val().data[size_t(c)]).epsilon(1e-12));
}

TEST_CASE("reweight matches the scalar loop oracle within 1e-10") {
  ParamStore<double> store(11);
  auto dgfe = make_dgfe(store);
  Tensor<double> p2 = randu<double>({8, 5, 7}, 53, -2.0, 2.0);
  Graph<double> g;
  Var<double> w = dgfe.reweight(g, {&g, g.leaf(p2)});
  auto expect = oracle_reweight(p2, store.find("dgfe.mlp.w1")->value,
                                store.find("dgfe.mlp.b1")->value,
                                store.find("dgfe.mlp.w2")->value,
                                store.find("dgfe.mlp.b2")->value);
  for (int c = 0; c < 8; ++c)
    CHECK(w.val().data[size_t(c)] == doctest::Approx(expect[size_t(c)]).epsilon(1e-10));
}

TEST_CASE("reweight gradcheck through pools and shared MLP") {
  ParamStore<double> store(12);
  auto dgfe = make_dgfe(store);
  Tensor<double> p2 = randu<double>({8, 4, 4}, 59, -1.0, 1.0);
  auto build = [&](Graph<double>& g) {
    Var<double> vp{&g, g.leaf_ref(&p2, true)};
    Var<double> w = dgfe.reweight(g, vp);
    return sum_all(mul(w, w));
  };
  auto eval = [&]() { Graph<double> g; return build(g).val().data[0]; };
  std::vector<Tensor<double>*> inputs = {&p2};
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    Var<double> loss = build(g);
    g.backward(loss.id);
    analytic.push_back(g.grad_of(g.find_leaf(&p2)));
    for (const auto& p : store.all()) {
      if (p->name.rfind("dgfe.mlp", 0) != 0) continue;
      inputs.push_back(&p->value);
      const int id = g.find_leaf(&p->value);
      analytic.push_back(id >= 0 ? g.grad_of(id) : Tensor<double>(p->value.shape));
    }
  }
  auto rep = finite_diff_check(eval, inputs, analytic, 1e-6, 12, 61, 1e-9);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("channels not divisible by reduction is a configuration error") {
  ParamStore<double> store(13);
  DgfeConfig cfg;
  cfg.reduction = 3;
  CHECK_THROWS_AS((void)Dgfe<double>(store, 8, cfg), ConfigError);
}

TEST_CASE("enhance: the elementwise attention identity holds exactly") {
  ParamStore<double> store(14);
  auto dgfe = make_dgfe(store);
  Tensor<double> d = randu<double>({1, 16, 16}, 67);
  Tensor<double> p2 = randu<double>({8, 4, 4}, 71, -1.0, 1.0);
  Graph<double> g;
  Var<double> vp{&g, g.leaf(p2)};
  Var<double> vd{&g, g.leaf(d)};
  Var<double> out = dgfe.enhance(g, vp, vd, 4);

  Var<double> w = dgfe.reweight(g, vp);
  Var<double> f = dgfe.filtration(g, vd, 4);
  for (int c = 0; c < 8; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const double expect =
            w.val().data[size_t(c)] * f.val().at(0, y, x) * p2.at(c, y, x);
        CHECK(out.val().at(c, y, x) == expect);  // exact, same fp order
      }
}

TEST_CASE("enhance with F=1 and zero MLP halves the features") {
  ParamStore<double> store(15);
  auto dgfe = make_dgfe(store);
  for (const auto& p : store.all())
    if (p->name.rfind("dgfe.mlp", 0) == 0)
      for (auto& v : p->value.data) v = 0.0;
  Tensor<double> p2 = randu<double>({8, 4, 4}, 73, -1.0, 1.0);
  Graph<double> g;
  Var<double> low{&g, g.leaf(Tensor<double>::full({1, 16, 16}, 0.01))};  // < t
  Var<double> out = dgfe.enhance(g, {&g, g.leaf(p2)}, low, 4);
  for (int c = 0; c < 8; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        CHECK(out.val().at(c, y, x) == doctest::Approx(0.5 * p2.at(c, y, x)).epsilon(1e-12));
}

TEST_CASE("enhance of zero features is zero") {
  ParamStore<double> store(16);
  auto dgfe = make_dgfe(store);
  Graph<double> g;
  Var<double> p2{&g, g.leaf(Tensor<double>({8, 4, 4}))};
  Var<double> d{&g, g.leaf(randu<double>({1, 16, 16}, 79))};
  Var<double> out = dgfe.enhance(g, p2, d, 4);
  for (double v : out.val().data) CHECK(v == 0.0);
}

TEST_CASE("attention entries stay in (0,2)") {
  ParamStore<double> store(17);
  auto dgfe = make_dgfe(store);
  Tensor<double> d = randu<double>({1, 16, 16}, 83);
  Tensor<double> ones({8, 4, 4});
  for (auto& v : ones.data) v = 1.0;
  Graph<double> g;
  Var<double> out = dgfe.enhance(g, {&g, g.leaf(ones)}, {&g, g.leaf(d)}, 4);
  // with P2 = 1 the output IS the attention matrix M = w_c * F
  for (double v : out.val().data) {
    CHECK(v > 0.0);
    CHECK(v < 2.0);
  }
}

TEST_CASE("multiply mode: all-below-threshold map zeroes the features") {
  ParamStore<double> store(18);
  DgfeConfig cfg;
  cfg.mode = DgfeMode::kMultiply;
  auto dgfe = make_dgfe(store, cfg);
  Tensor<double> p2 = randu<double>({8, 4, 4}, 89, -1.0, 1.0);
  Graph<double> g;
  Var<double> low{&g, g.leaf(Tensor<double>::full({1, 16, 16}, 0.0))};
  Var<double> out = dgfe.enhance_multiply(g, {&g, g.leaf(p2)}, low, 4);
  for (double v : out.val().data) CHECK(v == 0.0);

  Var<double> high{&g, g.leaf(Tensor<double>::full({1, 16, 16}, 0.99))};
  Var<double> keep = dgfe.enhance_multiply(g, {&g, g.leaf(p2)}, high, 4);
  for (size_t i = 0; i < p2.data.size(); ++i)
    CHECK(keep.val().data[i] == p2.data[i]);
}

TEST_CASE("concat mode preserves the feature shape") {
  ParamStore<double> store(19);
  DgfeConfig cfg;
  cfg.mode = DgfeMode::kConcat;
  auto dgfe = make_dgfe(store, cfg);
  Graph<double> g;
  Var<double> p2{&g, g.leaf(randu<double>({8, 4, 4}, 97))};
  Var<double> d{&g, g.leaf(randu<double>({1, 16, 16}, 101))};
  Var<double> out = dgfe.enhance_concat(g, p2, d, 4);
  CHECK(out.shape() == std::vector<int>({8, 4, 4}));
}

TEST_CASE("apply dispatches by mode; off returns features untouched") {
  Tensor<double> p2 = randu<double>({8, 4, 4}, 103);
  Tensor<double> d = randu<double>({1, 16, 16}, 107);
  ParamStore<double> store(20);
  DgfeConfig cfg;
  cfg.mode = DgfeMode::kOff;
  auto dgfe = make_dgfe(store, cfg);
  Graph<double> g;
  Var<double> vp{&g, g.leaf(p2)};
  Var<double> out = dgfe.apply(g, vp, {&g, g.leaf(d)}, 4);
  CHECK(out.id == vp.id);
}

TEST_CASE("stop_grad_diff blocks gradients into the difference map") {
  ParamStore<double> store(21);
  DgfeConfig cfg;
  cfg.stop_grad_diff = true;
  auto dgfe = make_dgfe(store, cfg);
  Tensor<double> d = randu<double>({1, 16, 16}, 109);
  Graph<double> g;
  Var<double> vd{&g, g.leaf(d, true)};
  Var<double> vp{&g, g.leaf(randu<double>({8, 4, 4}, 113), true)};
  Var<double> out = dgfe.apply(g, vp, vd, 4);
  g.backward(mean_all(mul(out, out)).id);
  double dn = 0;
  for (double v : g.grad_of(vd.id).data) dn += v * v;
  CHECK(dn == 0.0);
}

TEST_CASE("threshold 'none' resizes the raw map with +1") {
  ParamStore<double> store(22);
  DgfeConfig cfg;
  cfg.threshold = ThresholdMode::kNone;
  auto dgfe = make_dgfe(store, cfg);
  Tensor<double> d = randu<double>({1, 16, 16}, 127);
  Graph<double> g;
  Var<double> f = dgfe.filtration(g, {&g, g.leaf(d)}, 4);
  // maxpool of the raw map + 1
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      double mx = 0;
      for (int dy = 0; dy < 4; ++dy)
        for (int dx = 0; dx < 4; ++dx)
          mx = std::max(mx, d.at(0, 4 * y + dy, 4 * x + dx));
      CHECK(f.val().at(0, y, x) == doctest::Approx(1.0 + mx).epsilon(1e-12));
    }
}

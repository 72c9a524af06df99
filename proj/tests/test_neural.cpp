#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <random>

#include "albf/neural/checkpoint.hpp"
#include "albf/neural/head.hpp"
#include "oracles.hpp"

using namespace albf;
using namespace albf::nn;

namespace {

template <typename S>
Tensor4<S> random_tensor(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor4<S> t(c, h, w);
  for (auto& v : t.data) v = static_cast<S>(d(rng));
  return t;
}

// Scalar probe loss L = sum(r * y) so that dL/dy = r.
double probe(const Tensor4<double>& y, const Tensor4<double>& r) {
  double acc = 0;
  for (std::size_t k = 0; k < y.size(); ++k) acc += y.data[k] * r.data[k];
  return acc;
}

double norm_rel(const std::vector<double>& a, const std::vector<double>& b);

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// A conv bias feeding training-mode batch norm is removed by the mean subtraction, so its
// true gradient is identically zero; the difference quotient there is rounding noise.
bool bn_invariant(const std::string& name) { return name.ends_with(".conv.bias"); }

void expect_grad(const std::string& name, const std::vector<double>& analytic, const std::vector<double>& numeric,
                 double scale) {
  if (bn_invariant(name)) {
    EXPECT_LT(max_abs(analytic), 1e-10 * scale) << name;
    EXPECT_LT(max_abs(numeric), 1e-6 * scale) << name;
  } else {
    EXPECT_LT(norm_rel(analytic, numeric), 1e-4) << name;
  }
}

double norm_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += (a[k] - b[k]) * (a[k] - b[k]);
    den += b[k] * b[k];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

// Central differences of f over every element of `x`.
template <typename F>
std::vector<double> numeric_grad(std::vector<double>& x, F f, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double keep = x[k];
    x[k] = keep + h;
    const double fp = f();
    x[k] = keep - h;
    const double fm = f();
    x[k] = keep;
    g[k] = (fp - fm) / (2 * h);
  }
  return g;
}

// ---- naive reference network, independent of the library layers ----------------------------

using T = Tensor4<double>;
using Table = std::map<std::string, std::vector<double>>;

T ref_conv(const T& x, const std::vector<double>& w, const std::vector<double>& b, std::size_t k) {
  const std::size_t co_n = b.size();
  const long pad = static_cast<long>(k / 2);
  T y(co_n, x.h, x.w);
  for (std::size_t co = 0; co < co_n; ++co)
    for (std::size_t i = 0; i < x.h; ++i)
      for (std::size_t j = 0; j < x.w; ++j) {
        double acc = b[co];
        for (std::size_t ci = 0; ci < x.c; ++ci)
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t bb = 0; bb < k; ++bb) {
              const long si = static_cast<long>(i + a) - pad, sj = static_cast<long>(j + bb) - pad;
              if (si < 0 || sj < 0 || si >= static_cast<long>(x.h) || sj >= static_cast<long>(x.w)) continue;
              acc += w[((co * x.c + ci) * k + a) * k + bb] *
                     x.at(ci, static_cast<std::size_t>(si), static_cast<std::size_t>(sj));
            }
        y.at(co, i, j) = acc;
      }
  return y;
}

T ref_bn(const T& x, const std::vector<double>& g, const std::vector<double>& b, const std::vector<double>* rm,
         const std::vector<double>* rv) {
  T y(x.c, x.h, x.w);
  for (std::size_t c = 0; c < x.c; ++c) {
    double mean, var;
    if (rm) {
      mean = (*rm)[c];
      var = (*rv)[c];
    } else {
      std::vector<double> v(x.channel(c), x.channel(c) + x.plane());
      const auto s = oracle::two_pass(v);
      mean = s.mean;
      var = s.stddev * s.stddev;
    }
    for (std::size_t k = 0; k < x.plane(); ++k)
      y.channel(c)[k] = g[c] * (x.channel(c)[k] - mean) / std::sqrt(var + 1e-5) + b[c];
  }
  return y;
}

T ref_antirect(const T& x) {
  T y(2 * x.c, x.h, x.w);
  for (std::size_t k = 0; k < x.plane(); ++k) {
    double mean = 0;
    for (std::size_t c = 0; c < x.c; ++c) mean += x.channel(c)[k];
    mean /= static_cast<double>(x.c);
    for (std::size_t c = 0; c < x.c; ++c) {
      const double v = x.channel(c)[k] - mean;
      y.channel(c)[k] = std::max(v, 0.0);
      y.channel(x.c + c)[k] = std::max(-v, 0.0);
    }
  }
  return y;
}

T ref_cba(const Table& p, const std::string& n, const T& x, bool eval) {
  const auto& b = p.at(n + ".conv.bias");
  const auto y = ref_conv(x, p.at(n + ".conv.weight"), b, 3);
  const auto z = eval ? ref_bn(y, p.at(n + ".bn.gamma"), p.at(n + ".bn.beta"), &p.at(n + ".bn.running_mean"),
                               &p.at(n + ".bn.running_var"))
                      : ref_bn(y, p.at(n + ".bn.gamma"), p.at(n + ".bn.beta"), nullptr, nullptr);
  return ref_antirect(z);
}

T ref_double(const Table& p, const std::string& n, const T& x) {
  return ref_cba(p, n + ".c2", ref_cba(p, n + ".c1", x, true), true);
}

T ref_pool(const T& x) {
  T y(x.c, x.h / 2, x.w / 2);
  for (std::size_t c = 0; c < x.c; ++c)
    for (std::size_t i = 0; i < y.h; ++i)
      for (std::size_t j = 0; j < y.w; ++j)
        y.at(c, i, j) = std::max({x.at(c, 2 * i, 2 * j), x.at(c, 2 * i + 1, 2 * j), x.at(c, 2 * i, 2 * j + 1),
                                  x.at(c, 2 * i + 1, 2 * j + 1)});
  return y;
}

T ref_up(const T& x) {
  T y(x.c, 2 * x.h, 2 * x.w);
  for (std::size_t c = 0; c < x.c; ++c)
    for (std::size_t i = 0; i < y.h; ++i)
      for (std::size_t j = 0; j < y.w; ++j) y.at(c, i, j) = x.at(c, i / 2, j / 2);
  return y;
}

T ref_cat(const T& a, const T& b) {
  T y(a.c + b.c, a.h, a.w);
  for (std::size_t c = 0; c < a.c; ++c) std::copy(a.channel(c), a.channel(c) + a.plane(), y.channel(c));
  for (std::size_t c = 0; c < b.c; ++c) std::copy(b.channel(c), b.channel(c) + b.plane(), y.channel(a.c + c));
  return y;
}

T ref_unet(const Table& p, const T& x) {
  T h = ref_double(p, "stem", x);
  std::vector<T> skips;
  for (int l = 1; l <= 3; ++l) {
    skips.push_back(h);
    h = ref_double(p, "down" + std::to_string(l), ref_pool(h));
  }
  for (int l = 3; l >= 1; --l) {
    const std::string n = "up" + std::to_string(l);
    h = ref_conv(ref_up(h), p.at(n + ".proj.weight"), p.at(n + ".proj.bias"), 1);
    h = ref_double(p, n, ref_cat(h, skips[static_cast<std::size_t>(l - 1)]));
  }
  return ref_conv(h, p.at("out.weight"), p.at("out.bias"), 1);
}

Table table_of(UNet<double>& net) {
  Table t;
  for (auto* p : net.parameters()) t[p->name] = p->value;
  for (const auto& b : net.buffers()) t[b.name] = *b.values;
  return t;
}

// Random biases, BN affine terms and running statistics so that no path is trivially zero.
void randomize_all(UNet<double>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5), pos(0.5, 2.0);
  for (auto* p : net.parameters()) {
    if (p->name.ends_with(".bias") || p->name.ends_with(".beta")) {
      for (auto& v : p->value) v = u(rng);
    } else if (p->name.ends_with(".gamma")) {
      for (auto& v : p->value) v = pos(rng);
    }
  }
  for (const auto& b : net.buffers()) {
    for (auto& v : *b.values) v = b.name.ends_with("running_var") ? pos(rng) : u(rng);
  }
}

DelayedTensor small_cube(std::mt19937_64& rng, std::size_t m, std::size_t n, std::size_t c) {
  DelayedTensor t;
  t.probe = ProbeConfig{};
  t.probe.num_channels = c;
  t.grid = make_grid(t.probe, 0.020, m, n);
  t.data = oracle::random_cube(rng, m, n, c);
  return t;
}

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / (stem + std::to_string(::getpid()) + ".ckpt")).string();
}

}  // namespace

// ---- activation --------------------------------------------------------------------------------

TEST(AntiRectifier, ExamplesAndWidth) {
  AntiRectifier<double> act;
  Tensor4<double> x(2, 1, 1);
  x.at(0, 0, 0) = -1.0;  // mean 2 -> centred (-3, 3)
  x.at(1, 0, 0) = 5.0;
  const auto y = act.forward(x, Mode::Eval);
  ASSERT_EQ(y.c, 4u);
  EXPECT_EQ(y.at(0, 0, 0), 0.0);
  EXPECT_EQ(y.at(1, 0, 0), 3.0);
  EXPECT_EQ(y.at(2, 0, 0), 3.0);
  EXPECT_EQ(y.at(3, 0, 0), 0.0);

  Tensor4<double> c(5, 3, 3, 2.5);
  for (double v : act.forward(c, Mode::Eval).data) EXPECT_EQ(v, 0.0);
}

// ---- forward against the naive oracle ------------------------------------------------------------

TEST(ConvBnAct, FloatForwardMatchesNaiveOracle) {
  std::mt19937_64 rng(31);
  const auto x = random_tensor<float>(rng, 2, 4, 4);
  ConvBnAct<float> layer("blk", 2, 3);
  layer.init(rng);
  std::vector<Param<float>*> ps;
  layer.collect(ps);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* p : ps)
    if (p->name.ends_with("bias") || p->name.ends_with("beta"))
      for (auto& v : p->value) v = static_cast<float>(u(rng));

  Table tab;
  for (auto* p : ps) tab[p->name] = std::vector<double>(p->value.begin(), p->value.end());
  T xd(x.c, x.h, x.w);
  for (std::size_t k = 0; k < x.size(); ++k) xd.data[k] = x.data[k];

  const auto y = layer.forward(x, Mode::Train);
  const auto ref = ref_cba(tab, "blk", xd, false);
  ASSERT_EQ(y.c, 6u);
  for (std::size_t k = 0; k < y.size(); ++k) ASSERT_NEAR(y.data[k], ref.data[k], 1e-6) << k;

  std::vector<Buffer<float>> bufs;
  layer.collect_buffers(bufs);
  for (const auto& b : bufs) tab[b.name] = std::vector<double>(b.values->begin(), b.values->end());
  const auto ye = layer.forward(x, Mode::Eval);
  const auto refe = ref_cba(tab, "blk", xd, true);
  for (std::size_t k = 0; k < ye.size(); ++k) ASSERT_NEAR(ye.data[k], refe.data[k], 1e-6) << k;
}

TEST(UNetForward, MatchesNaiveOracle) {
  std::mt19937_64 rng(32);
  UNet<double> net(UNetConfig{4, 4}, 5);
  randomize_all(net, 6);
  const auto tab = table_of(net);
  const auto x = random_tensor<double>(rng, 4, 16, 8);
  const auto y = net.forward(x, Mode::Eval);
  const auto ref = ref_unet(tab, x);
  ASSERT_TRUE(y.same_shape(ref));
  for (std::size_t k = 0; k < y.size(); ++k) ASSERT_NEAR(y.data[k], ref.data[k], 1e-10);
}

TEST(UNetForward, ZeroInputGivesBiasPropagatedField) {
  UNet<double> net(UNetConfig{4, 4}, 7);
  randomize_all(net, 8);
  const auto tab = table_of(net);
  const T x(4, 16, 8, 0.0);
  const auto y = net.forward(x, Mode::Eval);
  const auto ref = ref_unet(tab, x);
  double mx = 0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    ASSERT_NEAR(y.data[k], ref.data[k], 1e-10);
    mx = std::max(mx, std::abs(y.data[k]));
  }
  EXPECT_GT(mx, 0.0);
}

TEST(UNetForward, ShapeContract) {
  UNet<double> desk(UNetConfig::desk_scale(), 1);
  DelayedTensor t;
  t.probe = ProbeConfig{};
  t.grid = make_grid(t.probe);
  t.data = Array3({256, 64, 16}, 0.0);
  const auto w = unet_forward(t, desk);
  EXPECT_EQ(w.weights.shape(), t.data.shape());

  UNet<double> small(UNetConfig{3, 4}, 1);
  for (auto [h, wd] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 8}, {24, 40}, {64, 16}}) {
    const auto y = small.forward(Tensor4<double>(3, h, wd, 0.1), Mode::Eval);
    EXPECT_EQ(y.c, 3u);
    EXPECT_EQ(y.h, h);
    EXPECT_EQ(y.w, wd);
  }
  try {
    small.forward(Tensor4<double>(3, 12, 8, 0.0), Mode::Eval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Configuration);
  }
  EXPECT_THROW(small.forward(Tensor4<double>(4, 8, 8, 0.0), Mode::Eval), Error);
}

TEST(UNetConfig, FullScaleWidths) {
  const auto c = UNetConfig::full_scale();
  EXPECT_EQ(c.in_channels, 128u);
  EXPECT_EQ(c.width(0), 64u);
  EXPECT_EQ(c.width(3), 512u);
  EXPECT_THROW((UNetConfig{16, 3}.validate()), Error);
}

// ---- gradients -----------------------------------------------------------------------------------

TEST(Gradients, Conv2d) {
  std::mt19937_64 rng(41);
  for (std::size_t k : {1ul, 3ul}) {
    Conv2d<double> conv("c", 3, 4, k);
    conv.init(rng);
    for (auto& v : conv.bias().value) v = 0.1;
    auto x = random_tensor<double>(rng, 3, 6, 5);
    const auto r = random_tensor<double>(rng, 4, 6, 5);
    conv.forward(x, Mode::Train);
    conv.weight().zero_grad();
    conv.bias().zero_grad();
    const auto dx = conv.backward(r);
    auto f = [&] { return probe(conv.forward(x, Mode::Eval), r); };
    EXPECT_LT(norm_rel(dx.data, numeric_grad(x.data, f)), 1e-4);
    EXPECT_LT(norm_rel(conv.weight().grad, numeric_grad(conv.weight().value, f)), 1e-4);
    EXPECT_LT(norm_rel(conv.bias().grad, numeric_grad(conv.bias().value, f)), 1e-4);
  }
}

TEST(Gradients, BatchNorm) {
  std::mt19937_64 rng(42);
  BatchNorm2d<double> bn("bn", 3);
  std::vector<Param<double>*> ps;
  bn.collect(ps);
  ps[0]->value = {1.3, 0.7, -0.4};
  ps[1]->value = {0.2, -0.1, 0.5};
  auto x = random_tensor<double>(rng, 3, 4, 5);
  const auto r = random_tensor<double>(rng, 3, 4, 5);
  bn.forward(x, Mode::Train);
  for (auto* p : ps) p->zero_grad();
  const auto dx = bn.backward(r);
  auto f = [&] { return probe(bn.forward(x, Mode::Train), r); };
  EXPECT_LT(norm_rel(dx.data, numeric_grad(x.data, f)), 1e-4);
  EXPECT_LT(norm_rel(ps[0]->grad, numeric_grad(ps[0]->value, f)), 1e-4);
  EXPECT_LT(norm_rel(ps[1]->grad, numeric_grad(ps[1]->value, f)), 1e-4);
}

TEST(Gradients, AntiRectifier) {
  std::mt19937_64 rng(43);
  AntiRectifier<double> act;
  auto x = random_tensor<double>(rng, 4, 5, 5);
  const auto r = random_tensor<double>(rng, 8, 5, 5);
  act.forward(x, Mode::Train);
  const auto dx = act.backward(r);
  auto f = [&] { return probe(act.forward(x, Mode::Eval), r); };
  EXPECT_LT(norm_rel(dx.data, numeric_grad(x.data, f)), 1e-4);
}

TEST(Gradients, MaxPoolAndUpsample) {
  std::mt19937_64 rng(44);
  MaxPool2<double> pool;
  auto x = random_tensor<double>(rng, 3, 6, 8);
  const auto r = random_tensor<double>(rng, 3, 3, 4);
  pool.forward(x, Mode::Train);
  const auto dx = pool.backward(r);
  auto f = [&] { return probe(pool.forward(x, Mode::Eval), r); };
  EXPECT_LT(norm_rel(dx.data, numeric_grad(x.data, f)), 1e-4);

  auto u = random_tensor<double>(rng, 2, 3, 4);
  const auto ru = random_tensor<double>(rng, 2, 6, 8);
  const auto du = upsample_nearest2_backward(ru);
  auto fu = [&] { return probe(upsample_nearest2(u), ru); };
  EXPECT_LT(norm_rel(du.data, numeric_grad(u.data, fu)), 1e-4);
}

TEST(Gradients, DoubleConvBlock) {
  std::mt19937_64 rng(45);
  DoubleConv<double> blk("d", 3, 4);
  blk.init(rng);
  std::vector<Param<double>*> ps;
  blk.collect(ps);
  auto x = random_tensor<double>(rng, 3, 6, 6);
  const auto r = random_tensor<double>(rng, 4, 6, 6);
  blk.forward(x, Mode::Train);
  for (auto* p : ps) p->zero_grad();
  const auto dx = blk.backward(r);
  auto f = [&] { return probe(blk.forward(x, Mode::Train), r); };
  EXPECT_LT(norm_rel(dx.data, numeric_grad(x.data, f)), 1e-4);
  const double scale = max_abs(dx.data);
  for (auto* p : ps) expect_grad(p->name, p->grad, numeric_grad(p->value, f), scale);
}

TEST(Gradients, WholeUNet) {
  std::mt19937_64 rng(46);
  UNet<double> net(UNetConfig{4, 4}, 9);
  randomize_all(net, 10);
  auto x = random_tensor<double>(rng, 4, 16, 16);
  const auto r = random_tensor<double>(rng, 4, 16, 16);
  net.forward(x, Mode::Train);
  net.zero_grad();
  const auto dx = net.backward(r);
  net.release();
  auto f = [&] {
    const double v = probe(net.forward(x, Mode::Train), r);
    net.release();
    return v;
  };
  EXPECT_LT(norm_rel(dx.data, numeric_grad(x.data, f)), 1e-4);
  for (auto* p : net.parameters()) {
    // A strided subset of each parameter keeps the runtime small.
    std::vector<double> analytic, numeric;
    for (std::size_t k = 0; k < p->value.size(); k += 1 + p->value.size() / 6) {
      analytic.push_back(p->grad[k]);
      const double keep = p->value[k];
      p->value[k] = keep + 1e-5;
      const double fp = f();
      p->value[k] = keep - 1e-5;
      const double fm = f();
      p->value[k] = keep;
      numeric.push_back((fp - fm) / 2e-5);
    }
    expect_grad(p->name, analytic, numeric, max_abs(dx.data));
  }
}

TEST(Gradients, HeadAndBModeLoss) {
  std::mt19937_64 rng(47);
  const auto t = small_cube(rng, 16, 4, 4);
  Array3 w = oracle::random_cube(rng, 16, 4, 4);
  TrainTarget target;
  target.bmode.dynamic_range = 60.0;
  target.bmode.db_values = Array2({16, 4});
  std::uniform_real_distribution<double> u(-60.0, 0.0);
  for (auto& v : target.bmode.db_values.flat()) v = u(rng);
  const LossOptions opt;
  ApodWeights aw{w};
  Array3 dw;
  head_loss(t, aw, target, opt, &dw);
  std::vector<double> x(aw.weights.flat().begin(), aw.weights.flat().end());
  auto f = [&] {
    std::copy(x.begin(), x.end(), aw.weights.flat().begin());
    return head_loss(t, aw, target, opt);
  };
  const auto num = numeric_grad(x, f);
  EXPECT_LT(norm_rel({dw.flat().begin(), dw.flat().end()}, num), 1e-4);
}

TEST(Gradients, HeadAndRfLoss) {
  std::mt19937_64 rng(48);
  const auto t = small_cube(rng, 16, 4, 4);
  ApodWeights aw{oracle::random_cube(rng, 16, 4, 4)};
  TrainTarget target;
  target.beamformed = Array2({16, 4});
  std::normal_distribution<double> d;
  for (auto& v : target.beamformed->flat()) v = d(rng);
  LossOptions opt;
  opt.domain = LossDomain::Rf;
  Array3 dw;
  head_loss(t, aw, target, opt, &dw);
  std::vector<double> x(aw.weights.flat().begin(), aw.weights.flat().end());
  auto f = [&] {
    std::copy(x.begin(), x.end(), aw.weights.flat().begin());
    return head_loss(t, aw, target, opt);
  };
  EXPECT_LT(norm_rel({dw.flat().begin(), dw.flat().end()}, numeric_grad(x, f)), 1e-4);
}

// ---- beamforming head --------------------------------------------------------------------------

TEST(BeamformHead, UnitWeightsReproduceDas) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = small_cube(rng, 16, 3, 5);
    const ApodWeights ones{Array3(t.data.shape(), 1.0)};
    ASSERT_TRUE(model_beamformed(t, ones).values == das(t).values);
    ASSERT_TRUE(beamform_head(t, ones).db_values == to_bmode(das(t)).db_values);
  }
}

TEST(BeamformHead, ZeroWeightsGiveZeroData) {
  std::mt19937_64 rng(52);
  const auto t = small_cube(rng, 16, 3, 5);
  const auto b = model_beamformed(t, ApodWeights{Array3(t.data.shape(), 0.0)});
  for (double v : b.values.flat()) ASSERT_EQ(v, 0.0);
  EXPECT_THROW(model_beamformed(t, ApodWeights{Array3({16, 3, 4}, 0.0)}), Error);
}

// ---- optimizer and training step ----------------------------------------------------------------

TEST(Adam, FirstStepIsSignTimesLearningRate) {
  Param<double> p("p", {4});
  p.value = {0.5, -0.25, 1.0, 0.0};
  p.grad = {2.0, -0.3, 1e-3, -7.0};
  const auto before = p.value;
  AdamState<double> st;
  std::vector<Param<double>*> ps{&p};
  st.bind(ps);
  TrainConfig cfg;
  adam_update(ps, st, cfg);
  EXPECT_EQ(st.step, 1u);
  for (std::size_t i = 0; i < 4; ++i) {
    const double sign = p.grad[i] > 0 ? 1.0 : -1.0;
    EXPECT_NEAR(p.value[i] - before[i], -cfg.learning_rate * sign, 1e-3 * cfg.learning_rate);
  }
  EXPECT_THROW((TrainConfig{0.0}.validate()), Error);
}

TEST(TrainStep, TargetEqualToPredictionLeavesParametersInPlace) {
  std::mt19937_64 rng(53);
  const auto t = small_cube(rng, 16, 8, 4);
  UNet<double> net(UNetConfig{4, 4}, 11);
  AdamState<double> opt;
  opt.bind(net.parameters());
  const LossOptions lo;

  // Build the target from the training-mode prediction, with the same soft floor the loss uses.
  const ApodWeights w{to_cube(net.forward(to_tensor<double>(t.data), Mode::Train))};
  net.release();
  const auto y = model_beamformed(t, w).values;
  const auto env = envelope(y);
  double top = 0;
  for (double v : env.flat()) top = std::max(top, v);
  TrainTarget target;
  target.bmode.dynamic_range = lo.dynamic_range;
  target.bmode.db_values = Array2(y.shape());
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double level = 10 * std::log10(env.storage()[k] * env.storage()[k] + 1e-30) - 20 * std::log10(top);
    const double u = (level + lo.dynamic_range) / lo.dynamic_range;
    const double s = u >= lo.soft_knee ? u : lo.soft_knee + lo.soft_knee * std::tanh((u - lo.soft_knee) / lo.soft_knee);
    target.bmode.db_values.storage()[k] = (s - 1.0) * lo.dynamic_range;
  }

  std::vector<std::vector<double>> before;
  for (auto* p : net.parameters()) before.push_back(p->value);
  const auto r = train_step(t, target, net, opt, TrainConfig{}, lo);
  ASSERT_TRUE(r.applied);
  EXPECT_LT(r.loss, 1e-20);
  EXPECT_EQ(opt.step, 1u);
  double worst = 0;
  for (std::size_t k = 0; k < before.size(); ++k)
    for (std::size_t i = 0; i < before[k].size(); ++i)
      worst = std::max(worst, std::abs(net.parameters()[k]->value[i] - before[k][i]));
  // With a near-zero gradient g the Adam step is lr * |g| / (|g| + eps), far below lr.
  EXPECT_LT(worst, 1e-2 * TrainConfig{}.learning_rate);
}

TEST(TrainStep, NonFiniteLossAbortsAndKeepsState) {
  std::mt19937_64 rng(54);
  auto t = small_cube(rng, 16, 8, 4);
  t.data(3, 2, 1) = std::numeric_limits<double>::quiet_NaN();
  UNet<double> net(UNetConfig{4, 4}, 12);
  AdamState<double> opt;
  opt.bind(net.parameters());
  TrainTarget target;
  target.bmode.db_values = Array2({16, 8}, -10.0);
  const auto ckpt = serialize_checkpoint(net, opt);
  const auto r = train_step(t, target, net, opt, TrainConfig{});
  EXPECT_FALSE(r.applied);
  EXPECT_FALSE(r.diagnostic.empty());
  EXPECT_EQ(serialize_checkpoint(net, opt), ckpt);
}

TEST(TrainStep, DeterministicTrajectory) {
  std::mt19937_64 rng(55);
  const auto t = small_cube(rng, 16, 8, 4);
  TrainTarget target{to_bmode(das(t)), das(t).values};
  auto run = [&] {
    UNet<double> net(UNetConfig{4, 4}, 13);
    AdamState<double> opt;
    opt.bind(net.parameters());
    std::vector<double> losses;
    for (int s = 0; s < 4; ++s) losses.push_back(train_step(t, target, net, opt, TrainConfig{}).loss);
    return std::make_pair(losses, serialize_checkpoint(net, opt));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(checkpoint_checksum(a.second), checkpoint_checksum(b.second));
}

TEST(TrainStep, LossDecreasesOnFixedTarget) {
  std::mt19937_64 rng(56);
  const auto t = small_cube(rng, 16, 8, 4);
  const auto target_b = gcf(t, GcfConfig{});
  TrainTarget target{to_bmode(target_b), target_b.values};
  UNet<double> net(UNetConfig{4, 4}, 14);
  AdamState<double> opt;
  opt.bind(net.parameters());
  const double first = train_step(t, target, net, opt, TrainConfig{}).loss;
  double last = first;
  for (int s = 0; s < 60; ++s) last = train_step(t, target, net, opt, TrainConfig{}).loss;
  EXPECT_LT(last, first);
}

// ---- checkpoints -----------------------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(61);
  const auto t = small_cube(rng, 16, 8, 4);
  UNet<double> net(UNetConfig{4, 4}, 15);
  AdamState<double> opt;
  opt.bind(net.parameters());
  TrainTarget target{to_bmode(das(t)), das(t).values};
  train_step(t, target, net, opt, TrainConfig{});
  const auto path = temp_path("albf_rt");
  save_checkpoint(net, opt, path);
  auto loaded = load_checkpoint<double>(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.model->config(), net.config());
  EXPECT_EQ(loaded.opt, opt);
  const auto x = to_tensor<double>(t.data);
  EXPECT_EQ(loaded.model->forward(x, Mode::Eval), net.forward(x, Mode::Eval));
  EXPECT_EQ(serialize_checkpoint(*loaded.model, loaded.opt), serialize_checkpoint(net, opt));
}

TEST(Checkpoint, FloatRoundTrip) {
  UNet<float> net(UNetConfig{4, 4}, 16);
  AdamState<float> opt;
  opt.bind(net.parameters());
  const auto bytes = serialize_checkpoint(net, opt);
  UNet<float> other(UNetConfig{4, 4}, 99);
  AdamState<float> o2;
  restore_checkpoint(bytes, other, o2);
  const Tensor4<float> x(4, 8, 8, 0.3f);
  EXPECT_EQ(other.forward(x, Mode::Eval), net.forward(x, Mode::Eval));
}

TEST(Checkpoint, WrongConfigurationOrPrecisionIsRejected) {
  UNet<double> net(UNetConfig{4, 4}, 17);
  AdamState<double> opt;
  opt.bind(net.parameters());
  const auto bytes = serialize_checkpoint(net, opt);
  UNet<double> wider(UNetConfig{4, 8}, 1);
  AdamState<double> o2;
  try {
    restore_checkpoint(bytes, wider, o2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Configuration);
  }
  UNet<float> single(UNetConfig{4, 4}, 1);
  AdamState<float> o3;
  EXPECT_THROW(restore_checkpoint(bytes, single, o3), Error);
}

TEST(Checkpoint, CorruptionIsIntegrityError) {
  UNet<double> net(UNetConfig{4, 4}, 18);
  AdamState<double> opt;
  opt.bind(net.parameters());
  const auto bytes = serialize_checkpoint(net, opt);
  auto expect_integrity = [&](std::vector<std::uint8_t> b) {
    UNet<double> m(UNetConfig{4, 4}, 1);
    AdamState<double> o;
    try {
      restore_checkpoint(b, m, o);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Integrity);
    }
  };
  auto flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x40;  // inside the trailing checksum
  expect_integrity(flipped);
  auto body = bytes;
  body[body.size() / 2] ^= 0x01;
  expect_integrity(body);
  expect_integrity({bytes.begin(), bytes.end() - 5});
  auto magic = bytes;
  magic[0] = 'X';
  expect_integrity(magic);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "ALBF0001");
}

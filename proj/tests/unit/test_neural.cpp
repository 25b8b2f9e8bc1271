#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "memno/neural.hpp"

using namespace memno;
using namespace memno::nn;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, std::uint64_t seed, double scale = 1.0, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Circular shift by s along axis 1 of [N, f, ...].
Tensor roll_axis1(const Tensor& x, std::size_t s) {
  const std::size_t n = x.dim(0), f = x.dim(1);
  const std::size_t inner = x.numel() / (n * f);
  std::vector<double> out(x.numel());
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < inner; ++j)
        out[(a * f + (i + s) % f) * inner + j] = x.at((a * f + i) * inner + j);
  return Tensor::from(x.shape(), std::move(out));
}

SsmParams random_ssm(std::size_t h, std::size_t n, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 0.7);
  std::vector<double> dt(h), re(h * n), im(h * n), c(2 * h * n), d(h);
  for (auto& x : dt) x = std::log(1e-3) + u(rng) * (std::log(0.5) - std::log(1e-3));
  for (auto& x : re) x = std::log(0.1 + u(rng));
  for (auto& x : im) x = 6.0 * (u(rng) - 0.5);
  for (auto& x : c) x = nd(rng);
  for (auto& x : d) x = nd(rng);
  SsmParams p;
  p.log_dt = Tensor::from({h}, dt, grad);
  p.log_neg_re = Tensor::from({h, n}, re, grad);
  p.a_im = Tensor::from({h, n}, im, grad);
  p.c = Tensor::from({h, n, 2}, c, grad);
  p.d = Tensor::from({h}, d, grad);
  return p;
}

ModelConfig small_config(const std::string& layers) {
  ModelConfig c;
  c.layers = layers;
  c.hidden = 8;
  c.expanded = 32;
  c.n_ssm = 4;
  return c;
}

}  // namespace

TEST_CASE("positional encoding") {
  const auto e = positional_encoding(4, 2.0);
  CHECK(std::vector<double>(e.data().begin(), e.data().end()) == std::vector<double>{0.0, 0.5, 1.0, 1.5});
  CHECK(positional_encoding(1, 3.0).at(0) == 0.0);
  const auto e2 = positional_encoding_2d(2, 1.0, 1.0);
  CHECK(e2.shape() == ad::Shape{2, 2, 2});
  CHECK(e2.at(0) == 0.0);
  CHECK(e2.at(1) == 0.0);
  CHECK(e2.at(6) == 1.0);
  CHECK(e2.at(7) == 1.0);
}

TEST_CASE("model config validation and text roundtrip") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.count('S') == 4);
  CHECK(c.modes(32) == 16);
  c.k_max = 20;
  CHECK_THROWS_AS(c.modes(32), std::invalid_argument);
  c.k_max = 5;
  c.layers = "STTS";
  c.window = 5;
  c.multi_input = 4;
  const auto back = ModelConfig::from_text(c.to_text());
  CHECK(back.layers == "STTS");
  CHECK(back.k_max == 5);
  CHECK(back.window == 5);
  CHECK(back.multi_input == 4);
  CHECK(back.dt_max == c.dt_max);

  ModelConfig bad;
  bad.layers = "TT";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.layers = "SXS";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(ModelConfig::from_text("hidden=abc\n"), std::invalid_argument);
  CHECK_THROWS_AS(ModelConfig::from_text("colour=blue\n"), std::invalid_argument);
  CHECK_THROWS_AS(MemNO(bad, 16, 1.0, 0), std::invalid_argument);
}

TEST_CASE("encoder contracts") {
  MemNO m(small_config("SS"), 16, 2.0, 1);
  for (auto& x : m.encoder_weight().mutable_data()) x = 0.0;
  for (auto& x : m.encoder_bias().mutable_data()) x = 0.0;
  const auto h = m.encode(random_tensor({2, 3, 16}, 5));
  CHECK(h.shape() == ad::Shape{2, 3, 16, 8});
  for (double x : h.data()) CHECK(x == 0.0);

  // Unit weight on the field channel, zero on position: constant field gives constant channels.
  auto w = m.encoder_weight().mutable_data();
  for (std::size_t o = 0; o < 8; ++o) w[o] = 1.0;
  const auto hc = m.encode(Tensor::full({1, 1, 16}, 0.7));
  for (double x : hc.data()) CHECK(x == doctest::Approx(0.7));

  ModelConfig mi = small_config("SS");
  mi.multi_input = 4;
  MemNO mm(mi, 16, 2.0, 1);
  CHECK(mm.encoder_weight().shape() == ad::Shape{4 + 1, 8});
  CHECK(mm.encode(random_tensor({1, 2, 16, 4}, 3)).shape() == ad::Shape{1, 2, 16, 8});
  CHECK_THROWS_AS(mm.encode(random_tensor({1, 2, 16}, 3)), ad::ShapeError);
  CHECK_THROWS_AS(m.encode(random_tensor({1, 2, 12}, 3)), ad::ShapeError);
}

TEST_CASE("ffno layer: identity, shift equivariance, 2D shape") {
  MemNO m(small_config("SS"), 16, 1.0, 2);
  FfnoParams p = m.ffno(0);
  const auto v = random_tensor({3, 16, 8}, 9);

  const auto shifted_in = ffno_layer(roll_axis1(v, 5), p);
  const auto shifted_out = roll_axis1(ffno_layer(v, p), 5);
  CHECK(max_abs_diff(shifted_in.data(), shifted_out.data()) <= 1e-10);

  FfnoParams id = p;
  id.r[0] = ad::ComplexTensor(Tensor::zeros(p.r[0].raw().shape()));
  id.w2 = Tensor::zeros(p.w2.shape());
  id.b2 = Tensor::zeros(p.b2.shape());
  CHECK(max_abs_diff(ffno_layer(v, id).data(), v.data()) == 0.0);

  ModelConfig c2 = small_config("SS");
  c2.dims = 2;
  MemNO m2(c2, 8, 1.0, 4);
  const auto v2 = random_tensor({2, 8, 8, 8}, 10);
  const auto y2 = ffno_layer(v2, m2.ffno(0));
  CHECK(y2.shape() == v2.shape());
  const auto y2s = ffno_layer(roll_axis1(v2, 3), m2.ffno(0));
  CHECK(max_abs_diff(y2s.data(), roll_axis1(y2, 3).data()) <= 1e-10);
}

TEST_CASE("parameter count formula") {
  for (std::size_t dims : {1u, 2u}) {
    ModelConfig c;
    c.layers = "S";
    c.hidden = 12;
    c.expanded = 48;
    c.dims = dims;
    MemNO m(c, 16, 1.0, 0);
    const std::size_t enc = (1 + dims) * 12 + 12;
    const std::size_t dec = 12 + 1;
    CHECK(m.parameter_count() == ffno_param_count(12, 48, 8, dims) + enc + dec);
    // Direct count of the FFNO layer tensors alone.
    const auto& f = m.ffno(0);
    std::size_t direct = f.w1.numel() + f.b1.numel() + f.w2.numel() + f.b2.numel();
    for (const auto& r : f.r) direct += r.raw().numel();
    CHECK(direct == ffno_param_count(12, 48, 8, dims));
  }
}

TEST_CASE("ssm kernel: example and limits") {
  SsmParams p;
  p.log_dt = Tensor::from({1}, {std::log(std::numbers::ln2)});
  p.log_neg_re = Tensor::from({1, 1}, {0.0});
  p.a_im = Tensor::from({1, 1}, {0.0});
  p.c = Tensor::from({1, 1, 2}, {1.0, 0.0});
  p.d = Tensor::zeros({1});
  const auto k = ssm_kernel(p, 5);
  for (std::size_t j = 0; j < 5; ++j) CHECK(k.at(j) == doctest::Approx(std::pow(0.5, j + 1)).epsilon(1e-14));

  p.log_dt = Tensor::from({1}, {std::log(1e-9)});
  const auto k0 = ssm_kernel(p, 4);
  for (double x : k0.data()) CHECK(std::abs(x) < 2e-9);
  CHECK_THROWS_AS(ssm_kernel(p, 0), std::invalid_argument);
}

TEST_CASE("ssm kernel convolution equals the recurrence") {
  const std::size_t h = 3;
  const auto p = random_ssm(h, 5, 21);
  for (std::size_t len : {1u, 7u, 64u}) {
    const auto u = random_tensor({1, len, 1, h}, 100 + len);
    const auto y = causal_conv(u, ssm_kernel(p, len), p.d, Windowing{});
    for (std::size_t c = 0; c < h; ++c) {
      std::vector<double> uc(len);
      for (std::size_t t = 0; t < len; ++t) uc[t] = u.at(t * h + c);
      const auto ref = ssm_recurrence(p, c, uc);
      double worst = 0.0;
      for (std::size_t t = 0; t < len; ++t) worst = std::max(worst, std::abs(ref[t] - y.at(t * h + c)));
      CHECK(worst <= 1e-6);
    }
  }
}

TEST_CASE("ssm kernel and causal conv gradients") {
  auto p = random_ssm(2, 3, 33, true);
  const auto weights = random_tensor({2, 6}, 34);
  auto loss_of = [&](const SsmParams& q) { return ad::sum(ad::mul(ssm_kernel(q, 6), weights)); };
  SUBCASE("log_dt") {
    CHECK(ad::grad_check([&](const Tensor& x) { auto q = p; q.log_dt = x; return loss_of(q); }, p.log_dt)
              .max_rel_error <= 1e-6);
  }
  SUBCASE("log_neg_re") {
    CHECK(ad::grad_check([&](const Tensor& x) { auto q = p; q.log_neg_re = x; return loss_of(q); }, p.log_neg_re)
              .max_rel_error <= 1e-6);
  }
  SUBCASE("a_im") {
    CHECK(ad::grad_check([&](const Tensor& x) { auto q = p; q.a_im = x; return loss_of(q); }, p.a_im)
              .max_rel_error <= 1e-6);
  }
  SUBCASE("c") {
    CHECK(ad::grad_check([&](const Tensor& x) { auto q = p; q.c = x; return loss_of(q); }, p.c).max_rel_error <=
          1e-6);
  }
  SUBCASE("conv inputs") {
    const auto u = random_tensor({2, 5, 3, 2}, 35, 1.0, true);
    const auto k = random_tensor({2, 6}, 36, 1.0, true);
    const auto g = random_tensor({2, 5, 3, 2}, 37);
    const Windowing w{2, 0, false};
    auto f_u = [&](const Tensor& x) { return ad::sum(ad::mul(causal_conv(x, k, p.d, w), g)); };
    auto f_k = [&](const Tensor& x) { return ad::sum(ad::mul(causal_conv(u, x, p.d, w), g)); };
    auto f_d = [&](const Tensor& x) { return ad::sum(ad::mul(causal_conv(u, k, x, w), g)); };
    CHECK(ad::grad_check(f_u, u).max_rel_error <= 1e-7);
    CHECK(ad::grad_check(f_k, k).max_rel_error <= 1e-7);
    CHECK(ad::grad_check(f_d, p.d).max_rel_error <= 1e-7);
  }
}

TEST_CASE("memory layer: identity, causality, windows") {
  const std::size_t h = 4;
  auto p = random_ssm(h, 3, 40);
  const auto v = random_tensor({2, 9, 5, h}, 41);

  auto zero = p;
  zero.c = Tensor::zeros(p.c.shape());
  zero.d = Tensor::zeros(p.d.shape());
  CHECK(max_abs_diff(memory_layer(v, zero, {}).data(), v.data()) == 0.0);

  const auto base = memory_layer(v, p, {});
  auto vp = v.detach();
  const std::size_t tp = 6;
  for (std::size_t i = 0; i < 5 * h; ++i) vp.mutable_data()[(0 * 9 + tp) * 5 * h + i] += 3.0;
  const auto pert = memory_layer(vp, p, {});
  for (std::size_t t = 0; t < tp; ++t)
    for (std::size_t i = 0; i < 5 * h; ++i) CHECK(pert.at(t * 5 * h + i) == base.at(t * 5 * h + i));
  CHECK(max_abs_diff(pert.data(), base.data()) > 0.0);

  // K = 1: each step sees only itself, i.e. a length-1 SSM applied stepwise.
  const auto k1 = memory_layer(v, p, Windowing{1, 0, false});
  for (std::size_t t = 0; t < 9; ++t) {
    const auto vt = ad::narrow(v, 1, t, 1);
    const auto single = memory_layer(vt, p, {});
    const auto got = ad::narrow(k1, 1, t, 1);
    CHECK(max_abs_diff(single.data(), got.data()) <= 1e-15);
  }

  // Chunked window 3 equals three independent length-3 sequences.
  const auto k3 = memory_layer(v, p, Windowing{3, 0, false});
  for (std::size_t b0 = 0; b0 < 9; b0 += 3) {
    const auto block = memory_layer(ad::narrow(v, 1, b0, 3), p, {});
    CHECK(max_abs_diff(block.data(), ad::narrow(k3, 1, b0, 3).data()) <= 1e-15);
  }
  // Reset interval behaves like chunking.
  CHECK(max_abs_diff(memory_layer(v, p, Windowing{0, 3, false}).data(), k3.data()) == 0.0);

  Windowing slide{3, 0, true};
  CHECK(slide.start(0) == 0);
  CHECK(slide.start(5) == 3);
  CHECK(Windowing{3, 0, false}.start(5) == 3);
  CHECK(Windowing{3, 0, false}.start(6) == 6);
  CHECK(Windowing{3, 0, true}.start(6) == 4);
}

TEST_CASE("memno forward: shapes, Markovian SSSS and causal SSTSS") {
  MemNO markov(small_config("SSSS"), 16, 2.0, 7);
  const auto u = random_tensor({2, 6, 16}, 50);
  const auto y = markov.forward(u);
  CHECK(y.shape() == ad::Shape{2, 6, 16});
  auto up = u.detach();
  for (std::size_t i = 0; i < 16; ++i) up.mutable_data()[3 * 16 + i] += 1.0;  // batch 0, t = 3
  const auto yp = markov.forward(up);
  for (std::size_t t = 0; t < 6; ++t) {
    const double diff = max_abs_diff(ad::narrow(ad::narrow(y, 0, 0, 1), 1, t, 1).data(),
                                     ad::narrow(ad::narrow(yp, 0, 0, 1), 1, t, 1).data());
    if (t == 3) CHECK(diff > 0.0);
    else CHECK(diff == 0.0);
  }

  for (const std::string layers : {"SSTSS", "TS", "STS"}) {
    MemNO mem(small_config(layers), 16, 2.0, 8);
    const auto ym = mem.forward(u);
    const auto ymp = mem.forward(up);
    double before = 0.0, after = 0.0;
    for (std::size_t t = 0; t < 6; ++t) {
      const double diff = max_abs_diff(ad::narrow(ad::narrow(ym, 0, 0, 1), 1, t, 1).data(),
                                       ad::narrow(ad::narrow(ymp, 0, 0, 1), 1, t, 1).data());
      if (t < 3) before = std::max(before, diff);
      else if (t > 3) after = std::max(after, diff);
    }
    CHECK(before == 0.0);
    CHECK(after > 0.0);
  }

  ModelConfig c2 = small_config("STS");
  c2.dims = 2;
  MemNO m2(c2, 8, 1.0, 3);
  CHECK(m2.forward(random_tensor({1, 3, 8, 8}, 51)).shape() == ad::Shape{1, 3, 8, 8});
}

TEST_CASE("FFNO stack commutes with circular shifts") {
  MemNO m(small_config("SSSS"), 16, 1.0, 12);
  const auto v = random_tensor({2, 16, 8}, 60);
  auto stack = [&](Tensor x) {
    for (std::size_t l = 0; l < 4; ++l) x = ffno_layer(x, m.ffno(l));
    return x;
  };
  CHECK(max_abs_diff(stack(roll_axis1(v, 7)).data(), roll_axis1(stack(v), 7).data()) <= 1e-10);
}

TEST_CASE("rollout matches the full forward pass") {
  for (const Windowing w : {Windowing{}, Windowing{3, 0, true}, Windowing{2, 0, false}, Windowing{0, 4, false}}) {
    MemNO m(small_config("STSTS"), 16, 2.0, 13);
    const auto u = random_tensor({2, 7, 16}, 70);
    const auto full = m.forward(u, w);
    Rollout r(m, 2, 7, w);
    for (std::size_t t = 0; t < 7; ++t) {
      const auto step = r.step(ad::reshape(ad::narrow(u, 1, t, 1), {2, 16}));
      CHECK(max_abs_diff(step.data(), ad::narrow(full, 1, t, 1).data()) <= 1e-12);
    }
    CHECK_THROWS_AS(r.step(Tensor::zeros({2, 16})), std::out_of_range);
  }
}

TEST_CASE("parameter flattening roundtrip") {
  MemNO a(small_config("STS"), 16, 2.0, 1);
  MemNO b(small_config("STS"), 16, 2.0, 2);
  CHECK(a.flat_parameters() != b.flat_parameters());
  b.set_parameters(a.flat_parameters());
  CHECK(a.flat_parameters() == b.flat_parameters());
  CHECK(a.parameter_names().size() == a.parameters().size());
  CHECK_THROWS_AS(b.set_parameters({1.0}), std::invalid_argument);
}

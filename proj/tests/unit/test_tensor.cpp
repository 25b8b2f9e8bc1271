#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "memno/tensor.hpp"

using namespace memno::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Naive DFT used as an independent reference.
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      const double th = -2.0 * M_PI * static_cast<double>(j * k) / static_cast<double>(n);
      out[k] += x[j] * std::complex<double>(std::cos(th), std::sin(th));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("elementwise add") {
  auto c = add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4}));
  CHECK(c.at(0) == 4.0);
  CHECK(c.at(1) == 6.0);
}

TEST_CASE("shape mismatch names both shapes") {
  try {
    add(Tensor::zeros({2}), Tensor::zeros({3}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("fft round trip and delta") {
  auto x = Tensor::from({4}, {0.3, -1.2, 0.7, 2.0});
  auto back = real(ifft(fft(x, 0), 0));
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(back.at(i) - x.at(i)) <= 1e-12);

  auto d = fft(Tensor::from({4}, {1, 0, 0, 0}), 0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(d.at(i) - std::complex<double>(1.0, 0.0)) <= 1e-14);
  }
  CHECK_THROWS_AS(fft(Tensor::zeros({0}), 0), ShapeError);
}

TEST_CASE("fft matches naive DFT along inner axis") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({3, 7, 2}, rng);
  auto z = fft(x, 1);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t j = 0; j < 2; ++j) {
      std::vector<double> line(7);
      for (std::size_t i = 0; i < 7; ++i) line[i] = x.at((a * 7 + i) * 2 + j);
      auto ref = naive_dft(line);
      for (std::size_t k = 0; k < 7; ++k) CHECK(std::abs(z.at((a * 7 + k) * 2 + j) - ref[k]) <= 1e-12);
    }
  }
}

TEST_CASE("backward on simple graphs") {
  auto x = Tensor::from({2}, {1, 2}, true);
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));

  // Accumulates on a second call.
  sum(mul(x, x)).backward();
  CHECK(x.grad()[1] == doctest::Approx(8.0));

  auto y = Tensor::from({5}, {0.1, 0.2, -0.3, 0.4, 0.9}, true);
  sum(real(ifft(fft(y, 0), 0))).backward();
  for (double g : y.grad()) CHECK(g == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(mul(x, x).backward(), ShapeError);
}

TEST_CASE("tape is skipped under NoGradGuard") {
  auto x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = sum(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad_check on sum and gelu") {
  std::mt19937_64 rng(7);
  auto x = random_tensor({6}, rng, -2.0, 2.0);
  CHECK(grad_check([](const Tensor& t) { return sum(t); }, x).max_rel_error <= 1e-10);
  CHECK(grad_check([](const Tensor& t) { return sum(gelu(t)); }, x).max_rel_error <= 1e-4);
}

TEST_CASE("grad_check reports non-finite coordinate") {
  auto f = [](const Tensor& t) { return sum(sqrt(t)); };
  // sqrt(0 - h) is NaN.
  try {
    grad_check(f, Tensor::from({3}, {1.0, 1.0, 0.0}));
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.index() == 2);
  }
}

TEST_CASE("grad_check for every op on random inputs") {
  std::mt19937_64 rng(11);
  const auto other = random_tensor({3, 4}, rng);
  const auto pos = random_tensor({3, 4}, rng, 0.5, 2.0);
  const auto w = random_tensor({4, 5}, rng);
  const auto b = random_tensor({5}, rng);
  const auto x = random_tensor({3, 4}, rng, 0.5, 1.5);
  const auto probe5 = random_tensor({3, 5}, rng);
  auto weights = random_tensor({3, 4}, rng);
  auto wsum = [&weights](const Tensor& t) { return sum(mul(t, weights)); };
  auto check = [&](const char* name, std::function<Tensor(const Tensor&)> f) {
    INFO(name);
    CHECK(grad_check(f, x).max_rel_error <= 1e-4);
  };
  check("add", [&](const Tensor& t) { return wsum(add(t, other)); });
  check("sub", [&](const Tensor& t) { return wsum(sub(other, t)); });
  check("mul", [&](const Tensor& t) { return wsum(mul(t, t)); });
  check("div", [&](const Tensor& t) { return wsum(div(other, t)); });
  check("div-num", [&](const Tensor& t) { return wsum(div(t, pos)); });
  check("scale", [&](const Tensor& t) { return wsum(add_scalar(scale(t, 2.5), 1.0)); });
  check("square", [&](const Tensor& t) { return wsum(square(t)); });
  check("sqrt", [&](const Tensor& t) { return wsum(sqrt(t)); });
  check("gelu", [&](const Tensor& t) { return wsum(gelu(t)); });
  check("matmul", [&](const Tensor& t) { return sum(square(matmul(t, w))); });
  check("matmul-rhs", [&](const Tensor& t) { return sum(square(matmul(transpose(w), transpose(t)))); });
  check("linear", [&](const Tensor& t) { return sum(square(linear(t, w, b))); });
  check("reshape", [&](const Tensor& t) { return sum(square(matmul(reshape(t, {4, 3}), other))); });
  check("permute", [&](const Tensor& t) {
    return wsum(reshape(permute(reshape(t, {3, 2, 2}), {2, 0, 1}), {3, 4}));
  });
  check("narrow", [&](const Tensor& t) { return sum(square(narrow(t, 1, 1, 2))); });
  check("concat", [&](const Tensor& t) {
    return sum(square(concat({narrow(t, 1, 0, 1), mul(t, t), narrow(t, 1, 2, 2)}, 1)));
  });
  check("expand", [&](const Tensor& t) { return sum(square(expand_leading(t, {2}))); });
  check("mean", [&](const Tensor& t) { return mean(square(t)); });
  check("sum_axis", [&](const Tensor& t) { return sum(square(sum_axis(t, 0))); });
  check("fft", [&](const Tensor& t) { return sum(square(imag(fft(t, 1)))); });
  check("fft-axis0", [&](const Tensor& t) { return sum(square(real(fft(t, 0)))); });
  check("ifft", [&](const Tensor& t) { return sum(square(real(ifft(make_complex(t, other), 1)))); });
  check("rfft", [&](const Tensor& t) {
    auto z = rfft(t, 1);
    return add(sum(square(real(z))), sum(mul(imag(z), imag(z))));
  });
  check("irfft", [&](const Tensor& t) {
    auto z = make_complex(narrow(t, 1, 0, 3), narrow(other, 1, 0, 3));
    return sum(square(irfft(z, 1, 4)));
  });
  check("irfft-odd", [&](const Tensor& t) {
    auto z = make_complex(narrow(t, 1, 0, 2), narrow(mul(t, t), 1, 1, 2));
    return sum(mul(irfft(z, 1, 5), probe5));
  });
  check("cmul", [&](const Tensor& t) {
    auto z = cmul(make_complex(t, other), make_complex(pos, t));
    return sum(mul(real(z), imag(z)));
  });
}

TEST_CASE("spectral_linear gradient") {
  std::mt19937_64 rng(21);
  const auto xr = random_tensor({2, 3, 2, 4, 2}, rng);  // N K M I re/im
  const auto wr = random_tensor({3, 4, 2, 2}, rng);     // K I O re/im
  const auto probe = random_tensor({2, 3, 2, 2, 2}, rng);
  auto fx = [&](const Tensor& t) {
    return sum(mul(spectral_linear(ComplexTensor(t), ComplexTensor(wr)).raw(), probe));
  };
  auto fw = [&](const Tensor& t) {
    return sum(square(spectral_linear(ComplexTensor(xr), ComplexTensor(t)).raw()));
  };
  CHECK(grad_check(fx, xr).max_rel_error <= 1e-6);
  CHECK(grad_check(fw, wr).max_rel_error <= 1e-6);
}

TEST_CASE("random three-layer composition matches finite differences") {
  std::mt19937_64 rng(99);
  const auto w1 = random_tensor({8, 6}, rng);
  const auto w2 = random_tensor({6, 8}, rng);
  const auto x = random_tensor({4, 8}, rng);
  auto f = [&](const Tensor& t) {
    auto h = gelu(linear(t, w1));
    auto s = irfft(rfft(h, 1), 1, 6);
    return mean(square(linear(s, w2)));
  };
  CHECK(grad_check(f, x).max_rel_error <= 1e-4);
}

TEST_CASE("tape linearity") {
  std::mt19937_64 rng(5);
  const auto base = random_tensor({5}, rng);
  auto grad_of = [&](auto&& fn) {
    Tensor x = base.detach(true);
    fn(x).backward();
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  auto f = [](const Tensor& x) { return sum(gelu(x)); };
  auto g = [](const Tensor& x) { return sum(square(real(fft(x, 0)))); };
  const double a = 1.7, b = -0.4;
  auto gf = grad_of(f);
  auto gg = grad_of(g);
  auto gc = grad_of([&](const Tensor& x) { return add(scale(f(x), a), scale(g(x), b)); });
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(gc[i] - (a * gf[i] + b * gg[i])) <= 1e-10);
}

TEST_CASE("Parseval under the forward-unnormalised convention") {
  std::mt19937_64 rng(1);
  for (std::size_t n : {1u, 2u, 7u, 16u, 33u}) {
    auto x = random_tensor({n}, rng);
    auto z = fft(x, 0);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      lhs += x.at(i) * x.at(i);
      rhs += std::norm(z.at(i));
    }
    CHECK(std::abs(lhs - rhs / static_cast<double>(n)) <= 1e-10);
  }
}

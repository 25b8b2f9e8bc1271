#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "memno/spectral.hpp"

using namespace memno::spectral;

namespace {

constexpr double kPi = std::numbers::pi;

SpectralField random_real_field(long K, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  SpectralField field(K, 2.0 * kPi, Convention::Continuous);
  field[0] = g(rng);
  for (long k = 1; k <= K; ++k) {
    field[k] = cplx(g(rng), g(rng));
    field[-k] = std::conj(field[k]);
  }
  return field;
}

// Direct evaluation of Σ_n u(x_n) e^{-2πink/f}.
cplx direct_dft(const std::vector<double>& u, long k) {
  cplx acc{};
  const auto f = static_cast<double>(u.size());
  for (std::size_t n = 0; n < u.size(); ++n) {
    const double th = -2.0 * kPi * static_cast<double>(n) * static_cast<double>(k) / f;
    acc += u[n] * cplx(std::cos(th), std::sin(th));
  }
  return acc;
}

}  // namespace

TEST_CASE("Grid1D rejects fewer than two points") {
  CHECK_THROWS_AS(Grid1D(1.0, 1), std::invalid_argument);
  Grid1D g(64.0, 4);
  CHECK(g.point(3) == doctest::Approx(48.0));
}

TEST_CASE("dft examples") {
  const std::vector<double> delta{1, 0, 0, 0};
  auto d = dft(delta, 1.0);
  for (long k = -2; k <= 2; ++k) CHECK(std::abs(d[k] - cplx(1.0)) <= 1e-14);

  const std::vector<double> cosine{1, 0, -1, 0};
  auto c = dft(cosine, 1.0);
  CHECK(std::abs(c[1] - cplx(2.0)) <= 1e-14);
  CHECK(std::abs(c[-1] - cplx(2.0)) <= 1e-14);
  CHECK(std::abs(c[0]) <= 1e-14);
  CHECK(std::abs(c[2]) <= 1e-14);

  const std::vector<double> constant(5, 0.7);
  auto k0 = dft(constant, 1.0);
  CHECK(std::abs(k0[0] - cplx(3.5)) <= 1e-13);
  for (long k = 1; k <= 2; ++k) CHECK(std::abs(k0[k]) <= 1e-13);

  CHECK_THROWS_AS(dft(std::vector<double>{}, 1.0), std::invalid_argument);
}

TEST_CASE("dft matches direct summation and inverts") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t f : {3u, 8u, 13u, 32u}) {
    std::vector<double> x(f);
    for (auto& v : x) v = u(rng);
    auto field = dft(x, 1.0);
    for (long k = -static_cast<long>(f / 2); k <= static_cast<long>(f / 2); ++k) {
      CHECK(std::abs(field[k] - direct_dft(x, k)) <= 1e-12);
    }
    auto back = idft(field, f);
    for (std::size_t i = 0; i < f; ++i) CHECK(std::abs(back[i] - x[i]) <= 1e-12);
  }
}

TEST_CASE("fourier_truncate") {
  SpectralField constant(3, 2 * kPi, Convention::Continuous);
  constant[0] = 2.0;
  auto same = fourier_truncate(constant, 1);
  CHECK(same.coefficients() == constant.coefficients());

  SpectralField cosx(3, 2 * kPi, Convention::Continuous);
  cosx[1] = cosx[-1] = 0.5;
  CHECK(fourier_truncate(cosx, 0).energy() == 0.0);

  SpectralField both = cosx;
  both[2] = both[-2] = 0.5;
  auto p1 = fourier_truncate(both, 1);
  CHECK(p1.coefficients() == cosx.coefficients());

  std::mt19937_64 rng(2);
  auto r = random_real_field(6, rng);
  auto once = fourier_truncate(r, 3);
  CHECK(fourier_truncate(once, 3).coefficients() == once.coefficients());
  CHECK(once.energy() <= r.energy());
  CHECK_THROWS_AS(fourier_truncate(r, -1), std::invalid_argument);
}

TEST_CASE("alias_sum examples") {
  SpectralField single(3, 1.0, Convention::Continuous);
  const cplx c(0.3, -0.2);
  single[3] = c;
  auto a = alias_sum(single, 2);
  CHECK(std::abs(a[1] - 2.0 * c) <= 1e-14);

  std::mt19937_64 rng(8);
  auto band = random_real_field(3, rng);
  auto b = alias_sum(band, 7);
  for (long k = -3; k <= 3; ++k) CHECK(std::abs(b[k] - 7.0 * band[k]) <= 1e-14);

  SpectralField zero(4, 1.0, Convention::Continuous);
  CHECK(alias_sum(zero, 5).energy() == 0.0);
}

TEST_CASE("Poisson consistency on random band-limited fields") {
  std::mt19937_64 rng(17);
  for (std::size_t f = 2; f <= 16; ++f) {
    for (int rep = 0; rep < 4; ++rep) {
      auto field = random_real_field(3 * static_cast<long>(f), rng);
      Grid1D grid(field.length(), f);
      auto sampled = dft(field.sample(grid), grid.length());
      auto predicted = alias_sum(field, f);
      const double scale = std::max(1.0, std::sqrt(predicted.energy()));
      for (long k = -static_cast<long>(f / 2); k <= static_cast<long>(f / 2); ++k) {
        CHECK(std::abs(predicted[k] - sampled[k]) <= 1e-10 * scale);
      }
    }
  }
}

TEST_CASE("omega_f") {
  std::mt19937_64 rng(3);
  auto band = random_real_field(4, rng);
  CHECK(omega_f(band, 8) == 0.0);
  CHECK(omega_f(band, 9) == 0.0);

  SpectralField high(6, 1.0, Convention::Continuous);
  high[5] = 1.0;
  CHECK(omega_f(high, 8) == 1.0);

  SpectralField half(6, 1.0, Convention::Continuous);
  half[1] = 1.0;
  half[6] = cplx(0.0, 1.0);
  CHECK(omega_f(half, 8) == doctest::Approx(0.5).epsilon(1e-15));

  SpectralField zero(2, 1.0, Convention::Continuous);
  CHECK_THROWS_AS(omega_f(zero, 4), ZeroEnergyError);

  auto r = random_real_field(20, rng);
  double prev = 1.0;
  for (std::size_t f = 2; f <= 44; ++f) {
    const double w = omega_f(r, f);
    CHECK(w <= prev);
    prev = w;
  }
}

TEST_CASE("omega from samples sees the even Nyquist bin once") {
  // cos(πn) on 8 points sits entirely on the Nyquist bin.
  std::vector<double> nyq(8);
  for (std::size_t i = 0; i < 8; ++i) nyq[i] = (i % 2 == 0) ? 1.0 : -1.0;
  CHECK(omega_f_samples(nyq, 8) == 0.0);
  CHECK(omega_f_samples(nyq, 6) == 1.0);

  std::vector<double> two(16 * 16);
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      two[i * 16 + j] = std::cos(2 * kPi * i / 16.0) + std::cos(2 * kPi * 5.0 * j / 16.0);
    }
  }
  CHECK(omega_f_samples_2d(two, 16, 8) == doctest::Approx(0.5));
  CHECK(omega_f_samples_2d(two, 16, 10) == doctest::Approx(0.0));
}

TEST_CASE("resample_1d") {
  std::vector<double> x(16);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : x) v = u(rng);
  CHECK(resample_1d(x, 16) == x);

  std::vector<double> constant(40, 1.25);
  for (double v : resample_1d(constant, 8)) CHECK(v == doctest::Approx(1.25).epsilon(1e-14));

  std::vector<double> fine(512);
  for (std::size_t i = 0; i < 512; ++i) fine[i] = std::sin(2 * kPi * i / 512.0 + 0.3);
  auto coarse = resample_1d(fine, 32);
  for (std::size_t j = 0; j < 32; ++j) {
    CHECK(std::abs(coarse[j] - std::sin(2 * kPi * j / 32.0 + 0.3)) <= 1e-4);
  }

  CHECK_THROWS_AS(resample_1d(x, 1), std::invalid_argument);
  CHECK_THROWS_AS(resample_1d(x, 17), std::invalid_argument);
}

TEST_CASE("resample_1d is spline-exact on coarse band-limited fields") {
  // 1000 -> 32 has a non-integer stride, so interpolation is exercised.
  std::mt19937_64 rng(6);
  const std::size_t target = 32;
  auto field = random_real_field(static_cast<long>(target / 2) - 1, rng);
  Grid1D fine(2 * kPi, 1000);
  auto coarse_exact = field.sample(Grid1D(2 * kPi, target));
  auto from_fine = resample_1d(field.sample(fine), target);
  double amp = 0.0;
  for (double v : coarse_exact) amp = std::max(amp, std::abs(v));
  for (std::size_t j = 0; j < target; ++j) CHECK(std::abs(from_fine[j] - coarse_exact[j]) <= 1e-4 * amp);
}

TEST_CASE("downsample_2d") {
  std::vector<double> grid(16);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) grid[i * 4 + j] = static_cast<double>(i);
  }
  CHECK(downsample_2d(grid, 4, 4) == grid);
  CHECK(downsample_2d(grid, 4, 2) == std::vector<double>{0, 0, 2, 2});
  CHECK(downsample_2d(std::vector<double>(16, 3.0), 4, 2) == std::vector<double>(4, 3.0));
  CHECK_THROWS_AS(downsample_2d(grid, 4, 3), std::invalid_argument);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "memno/fft.hpp"
#include "memno/pde.hpp"

using namespace memno;
using namespace memno::pde;
using spectral::cplx;

namespace {

constexpr double kPi = std::numbers::pi;

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double rel_diff(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

std::vector<cplx> spectrum(std::span<const double> u) {
  std::vector<cplx> z(u.begin(), u.end());
  fft::forward(z);
  return z;
}

// Worst per-mode deviation from exp(symbol(k̃) t) û(0), scaled by the largest coefficient.
double linear_limit_error(const SolverSpec& spec, const std::vector<double>& traj,
                          const std::function<double(double)>& symbol) {
  const std::size_t n = spec.resolution;
  const auto u0 = spectrum(std::span<const double>(traj.data(), n));
  double worst = 0.0;
  for (std::size_t s = 1; s <= spec.n_t; ++s) {
    const double t = static_cast<double>(s) * spec.save_interval();
    const auto us = spectrum(std::span<const double>(traj.data() + s * n, n));
    double scale = 0.0;
    std::vector<cplx> expect(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double kt = 2.0 * kPi * static_cast<double>(fft::signed_mode(i, n)) / spec.length;
      expect[i] = std::exp(symbol(kt) * t) * u0[i];
      scale = std::max(scale, std::abs(expect[i]));
    }
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(us[i] - expect[i]) / scale);
  }
  return worst;
}

std::vector<double> shift(std::span<const double> u, std::size_t by) {
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[(i + by) % u.size()] = u[i];
  return out;
}

}  // namespace

TEST_CASE("spec validation") {
  auto s = SolverSpec::ks();
  CHECK_NOTHROW(s.validate());
  CHECK(s.times().size() == 26);
  CHECK(s.save_interval() == doctest::Approx(0.1));
  s.resolution = 7;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = SolverSpec::ks();
  s.nu = 0.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK(parse_pde_kind("burgers") == PdeKind::Burgers);
  CHECK_THROWS_AS(parse_pde_kind("heat"), std::invalid_argument);
}

TEST_CASE("sinusoid initial condition") {
  spectral::Grid1D grid(64.0, 256);
  CHECK(sample_sinusoid_ic(5, grid) == sample_sinusoid_ic(5, grid));
  CHECK(sample_sinusoid_ic(5, grid) != sample_sinusoid_ic(6, grid));

  auto field = spectral::dft(sample_sinusoid_ic(9, grid), grid.length());
  for (long k = 9; k <= 128; ++k) {
    CHECK(std::abs(field[k]) <= 1e-10);
    CHECK(std::abs(field[-k]) <= 1e-10);
  }

  double mean_max = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) mean_max += max_abs(sample_sinusoid_ic(seed, grid));
  mean_max /= 1000.0;
  CHECK(mean_max >= 0.5);
  CHECK(mean_max <= 6.0);
}

TEST_CASE("KS fixed point and divergence reporting") {
  auto spec = SolverSpec::ks();
  spec.final_time = 0.5;
  spec.n_t = 5;
  std::vector<double> zero(spec.resolution, 0.0);
  CHECK(max_abs(ks_solve(spec, zero)) == 0.0);
  CHECK_THROWS_AS(ks_solve(spec, std::vector<double>(10, 0.0)), std::invalid_argument);

  std::vector<double> bad(spec.resolution, 0.0);
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  try {
    ks_solve(spec, bad);
    FAIL("expected divergence");
  } catch (const SolverDivergence& e) {
    CHECK(e.time() == doctest::Approx(0.1));
  }
}

TEST_CASE("KS linear limit matches the exact symbol") {
  auto spec = SolverSpec::ks();
  spec.nonlinear = false;
  const double nu = spec.nu;
  auto u0 = sample_sinusoid_ic(3, spectral::Grid1D(spec.length, spec.resolution));
  // Add content on every mode, Nyquist included.
  for (std::size_t i = 0; i < u0.size(); ++i) u0[i] += 1e-3 * std::cos(kPi * static_cast<double>(i)) + 0.01 * std::sin(0.37 * i * i);
  auto traj = ks_solve(spec, u0);
  CHECK(linear_limit_error(spec, traj, [nu](double k) { return k * k - nu * k * k * k * k; }) <= 1e-8);
}

TEST_CASE("KS self-convergence under step halving") {
  auto spec = SolverSpec::ks();
  spec.final_time = 0.5;
  spec.n_t = 5;
  auto u0 = sample_sinusoid_ic(11, spectral::Grid1D(spec.length, spec.resolution));
  auto coarse = ks_solve(spec, u0);
  spec.dt /= 2.0;
  auto fine = ks_solve(spec, u0);
  const std::size_t n = spec.resolution;
  CHECK(rel_diff(std::span(coarse).subspan(5 * n, n), std::span(fine).subspan(5 * n, n)) <= 1e-5);
}

TEST_CASE("KS and Burgers default trajectories are step-converged") {
  for (auto spec : {SolverSpec::ks(), SolverSpec::burgers()}) {
    INFO(to_string(spec.kind));
    auto u0 = sample_sinusoid_ic(2, spectral::Grid1D(spec.length, spec.resolution));
    auto solve = [&](const SolverSpec& s) { return s.kind == PdeKind::KS ? ks_solve(s, u0) : burgers_solve(s, u0); };
    auto a = solve(spec);
    auto half = spec;
    half.dt /= 2.0;
    auto b = solve(half);
    const std::size_t n = spec.resolution;
    for (std::size_t s = 1; s <= spec.n_t; ++s) {
      CHECK(rel_diff(std::span(a).subspan(s * n, n), std::span(b).subspan(s * n, n)) <= 1e-6);
    }
  }
}

TEST_CASE("translation equivariance") {
  for (auto spec : {SolverSpec::ks(), SolverSpec::burgers()}) {
    INFO(to_string(spec.kind));
    auto u0 = sample_sinusoid_ic(4, spectral::Grid1D(spec.length, spec.resolution));
    auto solve = [&](std::span<const double> u) {
      return spec.kind == PdeKind::KS ? ks_solve(spec, u) : burgers_solve(spec, u);
    };
    auto base = solve(u0);
    auto shifted = solve(shift(u0, 37));
    const std::size_t n = spec.resolution;
    for (std::size_t s = 0; s <= spec.n_t; ++s) {
      auto expect = shift(std::span(base).subspan(s * n, n), 37);
      CHECK(rel_diff(std::span(shifted).subspan(s * n, n), expect) <= 1e-6);
    }
  }
}

TEST_CASE("Burgers") {
  auto spec = SolverSpec::burgers();
  std::vector<double> zero(spec.resolution, 0.0);
  CHECK(max_abs(burgers_solve(spec, zero)) == 0.0);

  auto u0 = sample_sinusoid_ic(8, spectral::Grid1D(spec.length, spec.resolution));
  for (double& v : u0) v += 0.3;  // nonzero mean
  auto traj = burgers_solve(spec, u0);
  const std::size_t n = spec.resolution;
  const double m0 = std::accumulate(u0.begin(), u0.end(), 0.0) / n;
  for (std::size_t s = 1; s <= spec.n_t; ++s) {
    const double ms = std::accumulate(traj.begin() + s * n, traj.begin() + (s + 1) * n, 0.0) / n;
    CHECK(std::abs(ms - m0) <= 1e-10);
  }

  auto lin = spec;
  lin.nonlinear = false;
  const double nu = spec.nu;
  CHECK(linear_limit_error(lin, burgers_solve(lin, u0), [nu](double k) { return -nu * k * k; }) <= 1e-8);

  auto viscous = spec;
  viscous.nu = 1.0;
  auto decay = burgers_solve(viscous, sample_sinusoid_ic(8, spectral::Grid1D(spec.length, spec.resolution)));
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s <= spec.n_t; ++s) {
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) e += decay[s * n + i] * decay[s * n + i];
    CHECK(e < prev);
    prev = e;
  }
}

TEST_CASE("linear_evolve") {
  spectral::SpectralField g(3, 2 * kPi, spectral::Convention::Continuous);
  g[2] = cplx(0.5, -0.25);
  g[-2] = std::conj(g[2]);
  g[1] = 1.0;
  auto diff = FourierSymbol::diffusion(1.0, 3);
  CHECK(linear_evolve(diff, g, 0.0).coefficients() == g.coefficients());
  auto later = linear_evolve(diff, g, 0.1);
  CHECK(std::abs(later[2] - std::exp(-0.4) * g[2]) <= 1e-15);

  FourierSymbol advect(3, [](long k) { return cplx(0.0, 1.3 * static_cast<double>(k)); });
  auto moved = linear_evolve(advect, g, 2.7);
  for (long k = -3; k <= 3; ++k) CHECK(std::abs(moved[k]) == doctest::Approx(std::abs(g[k])).epsilon(1e-14));

  CHECK_THROWS_AS(linear_evolve(FourierSymbol::diffusion(1.0, 2), g, 1.0), std::invalid_argument);
}

TEST_CASE("GRF initial condition") {
  CHECK(sample_grf_ic_2d(3, 32) == sample_grf_ic_2d(3, 32));
  auto w = sample_grf_ic_2d(3, 32);
  CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0)) / w.size() <= 1e-14);

  // Radial-band power against σ_k² = 7³ (4π²|k|² + 49)^{-5/2}.
  const std::size_t f = 32;
  const int seeds = 500;
  std::vector<double> measured(f, 0.0), target(f, 0.0);
  for (int seed = 0; seed < seeds; ++seed) {
    auto field = sample_grf_ic_2d(static_cast<std::uint64_t>(seed), f);
    std::vector<cplx> z(field.begin(), field.end());
    fft::forward_2d(z, f, f);
    for (std::size_t i = 0; i < f; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        const long a = fft::signed_mode(i, f), b = fft::signed_mode(j, f);
        const auto band = static_cast<std::size_t>(std::lround(std::sqrt(double(a * a + b * b))));
        if (band == 0 || band >= f / 2) continue;
        const double c2 = std::norm(z[i * f + j]) / double(f * f * f * f);
        measured[band] += c2 / seeds;
        target[band] += 343.0 * std::pow(4 * kPi * kPi * double(a * a + b * b) + 49.0, -2.5) / seeds;
      }
    }
  }
  for (std::size_t band = 1; band < f / 2; ++band) {
    INFO("band " << band);
    CHECK(std::abs(measured[band] / target[band] - 1.0) <= 0.10);
  }
}

TEST_CASE("NS2D") {
  auto spec = SolverSpec::ns2d();
  spec.resolution = 32;
  spec.final_time = 0.1;
  spec.n_t = 2;

  auto quiet = spec;
  quiet.forcing = false;
  std::vector<double> zero(32 * 32, 0.0);
  CHECK(max_abs(ns2d_solve(quiet, zero)) == 0.0);

  // Viscous limit: each mode decays as exp(-ν 4π²|k|² t).
  auto viscous = quiet;
  viscous.nu = 10.0;
  auto w0 = sample_grf_ic_2d(1, 32);
  auto traj = ns2d_solve(viscous, w0);
  std::vector<cplx> exact(w0.begin(), w0.end());
  fft::forward_2d(exact, 32, 32);
  for (std::size_t i = 0; i < 32; ++i) {
    for (std::size_t j = 0; j < 32; ++j) {
      const double k2 = std::pow(fft::signed_mode(i, 32), 2) + std::pow(fft::signed_mode(j, 32), 2);
      exact[i * 32 + j] *= std::exp(-10.0 * 4 * kPi * kPi * k2 * 0.1);
    }
  }
  fft::inverse_2d(exact, 32, 32);
  double err = 0.0;
  for (std::size_t i = 0; i < 32 * 32; ++i) err = std::max(err, std::abs(traj[2 * 1024 + i] - exact[i].real()));
  CHECK(err <= 1e-4);

  auto forced = ns2d_solve(spec, w0);
  for (std::size_t s = 0; s <= spec.n_t; ++s) {
    CHECK(ns2d_spectral_divergence(std::span(forced).subspan(s * 1024, 1024), 32) <= 1e-10);
  }
}

TEST_CASE("NS2D step halving at the default viscosity") {
  auto spec = SolverSpec::ns2d();
  spec.final_time = 0.5;
  spec.n_t = 2;
  auto w0 = sample_grf_ic_2d(2, spec.resolution);
  auto a = ns2d_solve(spec, w0);
  auto half = spec;
  half.dt /= 2.0;
  auto b = ns2d_solve(half, w0);
  const std::size_t m = spec.resolution * spec.resolution;
  CHECK(rel_diff(std::span(a).subspan(2 * m, m), std::span(b).subspan(2 * m, m)) <= 1e-6);
}

TEST_CASE("batch generation is deterministic and thread-count independent") {
  auto spec = SolverSpec::ks();
  spec.final_time = 0.3;
  spec.n_t = 3;
  auto a = generate(spec, 5, 32, 1);
  auto b = generate(spec, 5, 32, 3);
  CHECK(a.data == b.data);
  CHECK(a.spatial == std::vector<std::size_t>{32});
  CHECK(a.n_times() == 4);
  CHECK_NOTHROW(a.validate());
  CHECK(trajectory_seed(0, 1) != trajectory_seed(0, 2));
  CHECK_THROWS_AS(generate(spec, 0, 32, 1), std::invalid_argument);
}

TEST_CASE("resolution reduction matches direct generation") {
  auto spec = SolverSpec::ks();
  spec.final_time = 0.2;
  spec.n_t = 2;
  const auto full = generate(spec, 2, 256, 1);
  const auto direct = generate(spec, 2, 32, 1);
  const auto reduced = reduce_resolution(full, 32);
  CHECK(reduced.data == direct.data);
  CHECK(reduced.spatial == direct.spatial);
  CHECK(reduced.times == direct.times);
  CHECK(reduce_resolution(full, 256).data == full.data);
  CHECK_THROWS_AS(reduce_resolution(full, 512), std::invalid_argument);

  TrajectorySet grid;
  grid.spec = SolverSpec::ns2d();
  grid.spec.n_t = 1;
  grid.n_traj = 1;
  grid.spatial = {8, 8};
  grid.times = grid.spec.times();
  grid.data.resize(2 * 64);
  std::iota(grid.data.begin(), grid.data.end(), 0.0);
  const auto half = reduce_resolution(grid, 4);
  CHECK(half.spatial == std::vector<std::size_t>{4, 4});
  CHECK(half.state(0, 1)[5] == grid.state(0, 1)[2 * 8 + 2]);
  CHECK_THROWS_AS(reduce_resolution(grid, 3), std::invalid_argument);
}

TEST_CASE("dataset omega") {
  TrajectorySet ts;
  ts.spec = SolverSpec::ks();
  ts.spec.n_t = 2;
  ts.n_traj = 2;
  ts.spatial = {32};
  ts.times = ts.spec.times();
  ts.data.resize(2 * 3 * 32);
  // Modes 1 and 3 only.
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < 32; ++i) {
        const double x = 2.0 * kPi * static_cast<double>(i) / 32.0;
        ts.state(b, t)[i] = std::sin(x + static_cast<double>(t)) + 0.5 * static_cast<double>(b + 1) * std::cos(3.0 * x);
      }
  for (std::size_t f : {6u, 8u, 16u, 32u}) {
    const auto s = dataset_omega(ts, f);
    // FFT round-off leaves energies of order ε² in unoccupied bins.
    CHECK(s.mean <= 1e-28);
    CHECK(s.std <= 1e-28);
    CHECK(s.samples == 6);
  }
  // f = 4 keeps modes |k| ≤ 2: energy fraction of mode 3 is a²/(1 + a²).
  const auto s4 = dataset_omega(ts, 4);
  const double e1 = 0.25 / 1.25, e2 = 1.0 / 2.0;
  CHECK(s4.mean == doctest::Approx(0.5 * (e1 + e2)).epsilon(1e-12));
  CHECK(s4.std == doctest::Approx(0.5 * (e2 - e1)).epsilon(1e-12));
  CHECK(dataset_omega(ts, 2).mean == doctest::Approx(s4.mean).epsilon(1e-12));

  auto spec = SolverSpec::ks();
  spec.final_time = 0.5;
  spec.n_t = 5;
  const auto ks = generate(spec, 3, 256, 1);
  double prev = 2.0;
  for (std::size_t f : {8u, 16u, 32u, 64u, 128u, 256u}) {
    const double w = dataset_omega(ks, f).mean;
    CHECK(w <= prev);
    prev = w;
  }
  CHECK(dataset_omega(ks, 32).mean > dataset_omega(ks, 128).mean);
}

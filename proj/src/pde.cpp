#include "memno/pde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "memno/fft.hpp"

namespace memno::pde {

using spectral::cplx;
constexpr double kPi = std::numbers::pi;

std::string to_string(PdeKind kind) {
  switch (kind) {
    case PdeKind::KS: return "ks";
    case PdeKind::Burgers: return "burgers";
    case PdeKind::Linear: return "linear";
    case PdeKind::NS2D: return "ns2d";
  }
  return "unknown";
}

PdeKind parse_pde_kind(const std::string& name) {
  if (name == "ks") return PdeKind::KS;
  if (name == "burgers") return PdeKind::Burgers;
  if (name == "linear") return PdeKind::Linear;
  if (name == "ns2d") return PdeKind::NS2D;
  throw std::invalid_argument("unknown pde kind '" + name + "' (expected ks, burgers, linear or ns2d)");
}

SolverSpec SolverSpec::ks() { return {}; }

SolverSpec SolverSpec::burgers() {
  SolverSpec s;
  s.kind = PdeKind::Burgers;
  s.nu = 0.05;
  s.length = 2.0 * kPi;
  s.final_time = 2.0;
  s.n_t = 20;
  s.dt = 1e-3;
  return s;
}

SolverSpec SolverSpec::ns2d() {
  SolverSpec s;
  s.kind = PdeKind::NS2D;
  s.nu = 1e-3;
  s.length = 1.0;
  s.final_time = 16.0;
  s.n_t = 32;
  s.dt = 1e-4;
  s.resolution = 64;
  return s;
}

void SolverSpec::validate() const {
  if (kind != PdeKind::Linear && !(nu > 0.0)) throw std::invalid_argument("viscosity must be positive");
  if (!(final_time > 0.0)) throw std::invalid_argument("final time must be positive");
  if (n_t < 1) throw std::invalid_argument("need at least one saved timestep");
  if (!(dt > 0.0)) throw std::invalid_argument("internal step must be positive");
  if (!(length > 0.0)) throw std::invalid_argument("domain length must be positive");
  if (resolution < 8 || resolution % 2 != 0) {
    throw std::invalid_argument("resolution must be even and at least 8, got " + std::to_string(resolution));
  }
}

std::vector<double> SolverSpec::times() const {
  std::vector<double> t(n_t + 1);
  for (std::size_t i = 0; i <= n_t; ++i) t[i] = static_cast<double>(i) * save_interval();
  return t;
}

std::string SolverSpec::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "pde=" << to_string(kind) << "\nnu=" << nu << "\nlength=" << length << "\nfinal_time=" << final_time
     << "\nn_t=" << n_t << "\ndt=" << dt << "\nresolution=" << resolution << "\nseed=" << seed
     << "\nnonlinear=" << (nonlinear ? 1 : 0) << "\nforcing=" << (forcing ? 1 : 0) << '\n';
  return os.str();
}

SolverSpec SolverSpec::from_text(const std::string& text) {
  SolverSpec s;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("solver spec: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    auto bad = [&] { return std::invalid_argument("solver spec: bad value for '" + key + "': '" + val + "'"); };
    auto real = [&] {
      try {
        return std::stod(val);
      } catch (const std::logic_error&) {
        throw bad();
      }
    };
    auto count = [&] {
      try {
        return static_cast<std::size_t>(std::stoull(val));
      } catch (const std::logic_error&) {
        throw bad();
      }
    };
    if (key == "pde") s.kind = parse_pde_kind(val);
    else if (key == "nu") s.nu = real();
    else if (key == "length") s.length = real();
    else if (key == "final_time") s.final_time = real();
    else if (key == "n_t") s.n_t = count();
    else if (key == "dt") s.dt = real();
    else if (key == "resolution") s.resolution = count();
    else if (key == "seed") s.seed = count();
    else if (key == "nonlinear") s.nonlinear = count() != 0;
    else if (key == "forcing") s.forcing = count() != 0;
    else throw std::invalid_argument("solver spec: unknown key '" + key + "'");
  }
  return s;
}

SolverDivergence::SolverDivergence(const std::string& solver, double time)
    : std::runtime_error(solver + ": non-finite state at t=" + std::to_string(time)), time_(time) {}

std::size_t TrajectorySet::state_size() const {
  std::size_t n = 1;
  for (auto s : spatial) n *= s;
  return n;
}

std::span<const double> TrajectorySet::state(std::size_t traj, std::size_t step) const {
  const std::size_t s = state_size();
  return {data.data() + (traj * n_times() + step) * s, s};
}

std::span<double> TrajectorySet::state(std::size_t traj, std::size_t step) {
  const std::size_t s = state_size();
  return {data.data() + (traj * n_times() + step) * s, s};
}

void TrajectorySet::validate() const {
  if (spatial.empty() || spatial.size() > 2) throw std::invalid_argument("trajectory set must be 1D or 2D");
  if (times.empty()) throw std::invalid_argument("trajectory set has an empty time grid");
  if (data.size() != n_traj * n_times() * state_size()) {
    throw std::invalid_argument("trajectory set payload has " + std::to_string(data.size()) +
                                " values, extents need " + std::to_string(n_traj * n_times() * state_size()));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) throw std::invalid_argument("non-finite value at flat index " + std::to_string(i));
  }
  if (times.size() > 1) {
    const double dt = times[1] - times[0];
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (std::abs(times[i] - times[i - 1] - dt) > 1e-9 * std::max(1.0, std::abs(dt))) {
        throw std::invalid_argument("time grid is not equispaced");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// initial conditions

std::vector<double> sample_sinusoid_ic(std::uint64_t seed, const spectral::Grid1D& grid) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(-0.5, 0.5);
  std::uniform_int_distribution<int> mode(1, 8);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  std::vector<double> u(grid.resolution(), 0.0);
  for (int i = 0; i <= 20; ++i) {
    const double a = amp(rng);
    const int k = mode(rng);
    const double phi = phase(rng);
    for (std::size_t j = 0; j < u.size(); ++j) {
      u[j] += a * std::sin(2.0 * kPi * k * grid.point(j) / grid.length() + phi);
    }
  }
  return u;
}

std::vector<double> sample_grf_ic_2d(std::uint64_t seed, std::size_t f) {
  if (f < 2 || f % 2 != 0) throw std::invalid_argument("GRF resolution must be even");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const double scale = std::pow(7.0, 1.5);
  std::vector<cplx> c(f * f);
  auto sigma = [&](long k1, long k2) {
    const double k2sum = static_cast<double>(k1 * k1 + k2 * k2);
    return scale * std::pow(4.0 * kPi * kPi * k2sum + 49.0, -1.25);
  };
  auto bin = [f](long k) { return static_cast<std::size_t>((k % static_cast<long>(f) + static_cast<long>(f)) % static_cast<long>(f)); };
  for (std::size_t i = 0; i < f; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const long k1 = fft::signed_mode(i, f);
      const long k2 = fft::signed_mode(j, f);
      const std::size_t mi = bin(-k1);
      const std::size_t mj = bin(-k2);
      const std::size_t self = i * f + j;
      const std::size_t mirror = mi * f + mj;
      if (self == 0) continue;
      if (mirror < self) continue;  // filled with its partner
      const double s = sigma(k1, k2);
      if (mirror == self) {
        c[self] = s * normal(rng);
      } else {
        const double re = normal(rng);
        const double im = normal(rng);
        c[self] = s * std::numbers::sqrt2 * 0.5 * cplx(re, im);
        c[mirror] = std::conj(c[self]);
      }
    }
  }
  fft::inverse_2d(c, f, f);
  std::vector<double> w(f * f);
  const double n2 = static_cast<double>(f * f);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = c[i].real() * n2;
  return w;
}

// ---------------------------------------------------------------------------
// 1D pseudospectral ETDRK4

namespace {

struct Etdrk4 {
  std::vector<double> e, e2, q, f1, f2, f3;

  Etdrk4(const std::vector<double>& lin, double h) {
    const std::size_t n = lin.size();
    e.resize(n);
    e2.resize(n);
    q.resize(n);
    f1.resize(n);
    f2.resize(n);
    f3.resize(n);
    constexpr int kContour = 32;
    for (std::size_t k = 0; k < n; ++k) {
      const double hl = h * lin[k];
      e[k] = std::exp(hl);
      e2[k] = std::exp(0.5 * hl);
      cplx sq{}, s1{}, s2{}, s3{};
      for (int m = 1; m <= kContour; ++m) {
        const cplx r = std::exp(cplx(0.0, kPi * (m - 0.5) / kContour));
        const cplx z = hl + r;
        const cplx ez = std::exp(z);
        const cplx z3 = z * z * z;
        sq += (std::exp(0.5 * z) - 1.0) / z;
        s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
        s2 += (2.0 + z + ez * (z - 2.0)) / z3;
        s3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
      }
      q[k] = h * sq.real() / kContour;
      f1[k] = h * s1.real() / kContour;
      f2[k] = h * s2.real() / kContour;
      f3[k] = h * s3.real() / kContour;
    }
  }
};

class Pseudospectral1D {
 public:
  Pseudospectral1D(std::size_t n, double length, bool nonlinear) : n_(n), nonlinear_(nonlinear) {
    wave_.resize(n);
    deriv_.resize(n);
    mask_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const long k = fft::signed_mode(i, n);
      wave_[i] = 2.0 * kPi * static_cast<double>(k) / length;
      // Odd derivatives vanish on the even-n Nyquist bin.
      deriv_[i] = (n % 2 == 0 && i == n / 2) ? 0.0 : wave_[i];
      mask_[i] = (3 * std::abs(k) < static_cast<long>(n)) ? 1.0 : 0.0;
    }
    work_.resize(n);
  }

  const std::vector<double>& wave() const { return wave_; }

  // -(u²/2)_x in Fourier space, dealiased.
  void nonlinear(const std::vector<cplx>& v, std::vector<cplx>& out) {
    if (!nonlinear_) {
      std::fill(out.begin(), out.end(), cplx{});
      return;
    }
    for (std::size_t i = 0; i < n_; ++i) work_[i] = v[i] * mask_[i];
    fft::inverse(work_);
    for (auto& x : work_) x = cplx(x.real() * x.real(), 0.0);
    fft::forward(work_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = cplx(0.0, -0.5 * deriv_[i]) * work_[i] * mask_[i];
  }

 private:
  std::size_t n_;
  bool nonlinear_;
  std::vector<double> wave_;
  std::vector<double> deriv_;
  std::vector<double> mask_;
  std::vector<cplx> work_;
};

std::vector<double> march_1d(const SolverSpec& spec, std::span<const double> u0, const char* name,
                             const std::function<double(double)>& symbol) {
  spec.validate();
  const std::size_t n = spec.resolution;
  if (u0.size() != n) {
    throw std::invalid_argument(std::string(name) + ": initial condition has " + std::to_string(u0.size()) +
                                " points, spec resolution is " + std::to_string(n));
  }
  Pseudospectral1D ps(n, spec.length, spec.nonlinear);
  std::vector<double> lin(n);
  for (std::size_t i = 0; i < n; ++i) lin[i] = symbol(ps.wave()[i]);

  const double save = spec.save_interval();
  const auto substeps = static_cast<std::size_t>(std::max(1.0, std::ceil(save / spec.dt - 1e-9)));
  const double h = save / static_cast<double>(substeps);
  const Etdrk4 c(lin, h);

  std::vector<cplx> v(u0.begin(), u0.end());
  fft::forward(v);
  std::vector<cplx> nv(n), na(n), nb(n), nc(n), a(n), b(n), cc(n), tmp(n);

  std::vector<double> out((spec.n_t + 1) * n);
  std::copy(u0.begin(), u0.end(), out.begin());
  for (std::size_t s = 1; s <= spec.n_t; ++s) {
    for (std::size_t step = 0; step < substeps; ++step) {
      ps.nonlinear(v, nv);
      for (std::size_t i = 0; i < n; ++i) a[i] = c.e2[i] * v[i] + c.q[i] * nv[i];
      ps.nonlinear(a, na);
      for (std::size_t i = 0; i < n; ++i) b[i] = c.e2[i] * v[i] + c.q[i] * na[i];
      ps.nonlinear(b, nb);
      for (std::size_t i = 0; i < n; ++i) cc[i] = c.e2[i] * a[i] + c.q[i] * (2.0 * nb[i] - nv[i]);
      ps.nonlinear(cc, nc);
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = c.e[i] * v[i] + nv[i] * c.f1[i] + 2.0 * (na[i] + nb[i]) * c.f2[i] + nc[i] * c.f3[i];
      }
    }
    tmp = v;
    fft::inverse(tmp);
    double* dst = out.data() + s * n;
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = tmp[i].real();
      if (!std::isfinite(dst[i])) throw SolverDivergence(name, static_cast<double>(s) * save);
    }
  }
  return out;
}

}  // namespace

std::vector<double> ks_solve(const SolverSpec& spec, std::span<const double> u0) {
  if (spec.kind != PdeKind::KS) throw std::invalid_argument("ks_solve needs a KS spec");
  const double nu = spec.nu;
  return march_1d(spec, u0, "ks_solve", [nu](double k) { return k * k - nu * k * k * k * k; });
}

std::vector<double> burgers_solve(const SolverSpec& spec, std::span<const double> u0) {
  if (spec.kind != PdeKind::Burgers) throw std::invalid_argument("burgers_solve needs a Burgers spec");
  const double nu = spec.nu;
  return march_1d(spec, u0, "burgers_solve", [nu](double k) { return -nu * k * k; });
}

// ---------------------------------------------------------------------------
// 2D Navier-Stokes, vorticity form on the unit torus

namespace {

struct Torus {
  std::size_t n;
  std::vector<double> k1, k2, lap, mask;

  explicit Torus(std::size_t f) : n(f), k1(f * f), k2(f * f), lap(f * f), mask(f * f) {
    const double cutoff = (2.0 / 3.0) * static_cast<double>(f / 2);
    for (std::size_t i = 0; i < f; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        const auto a = static_cast<double>(fft::signed_mode(i, f));
        const auto b = static_cast<double>(fft::signed_mode(j, f));
        const std::size_t idx = i * f + j;
        k1[idx] = a;
        k2[idx] = b;
        lap[idx] = 4.0 * kPi * kPi * (a * a + b * b);
        mask[idx] = (std::abs(a) <= cutoff && std::abs(b) <= cutoff) ? 1.0 : 0.0;
      }
    }
    lap[0] = 1.0;  // avoids 0/0 in the Poisson solve; mode 0 of ψ is unused
  }

  // Spectral velocity (û, v̂) = (∂ψ/∂y, −∂ψ/∂x) from vorticity. x is the
  // first (row) index.
  void velocity(const std::vector<cplx>& w_h, std::vector<cplx>& u_h, std::vector<cplx>& v_h) const {
    for (std::size_t i = 0; i < w_h.size(); ++i) {
      const cplx psi = (i == 0) ? cplx{} : w_h[i] / lap[i];
      u_h[i] = cplx(0.0, 2.0 * kPi * k2[i]) * psi;
      v_h[i] = -cplx(0.0, 2.0 * kPi * k1[i]) * psi;
    }
  }

  // Dealiased spectrum of u·∇w.
  void advection(const std::vector<cplx>& w_h, std::vector<cplx>& out) {
    const std::size_t m = w_h.size();
    u.resize(m);
    v.resize(m);
    wx.resize(m);
    wy.resize(m);
    velocity(w_h, u, v);
    for (std::size_t i = 0; i < m; ++i) {
      wx[i] = cplx(0.0, 2.0 * kPi * k1[i]) * w_h[i];
      wy[i] = cplx(0.0, 2.0 * kPi * k2[i]) * w_h[i];
    }
    fft::inverse_2d(u, n, n);
    fft::inverse_2d(v, n, n);
    fft::inverse_2d(wx, n, n);
    fft::inverse_2d(wy, n, n);
    for (std::size_t i = 0; i < m; ++i) out[i] = u[i].real() * wx[i].real() + v[i].real() * wy[i].real();
    fft::forward_2d(out, n, n);
    for (std::size_t i = 0; i < m; ++i) out[i] *= mask[i];
  }

  std::vector<cplx> u, v, wx, wy;  // scratch
};

}  // namespace

double ns2d_spectral_divergence(std::span<const double> w, std::size_t f) {
  if (w.size() != f * f) throw std::invalid_argument("ns2d_spectral_divergence: size mismatch");
  Torus torus(f);
  std::vector<cplx> w_h(w.begin(), w.end());
  fft::forward_2d(w_h, f, f);
  std::vector<cplx> u_h(f * f), v_h(f * f);
  torus.velocity(w_h, u_h, v_h);
  double worst = 0.0;
  for (std::size_t i = 0; i < w_h.size(); ++i) {
    const cplx div = cplx(0.0, 2.0 * kPi * torus.k1[i]) * u_h[i] + cplx(0.0, 2.0 * kPi * torus.k2[i]) * v_h[i];
    worst = std::max(worst, std::abs(div));
  }
  return worst;
}

std::vector<double> ns2d_solve(const SolverSpec& spec, std::span<const double> w0) {
  if (spec.kind != PdeKind::NS2D) throw std::invalid_argument("ns2d_solve needs an NS2D spec");
  spec.validate();
  const std::size_t f = spec.resolution;
  const std::size_t m = f * f;
  if (w0.size() != m) {
    throw std::invalid_argument("ns2d_solve: initial vorticity has " + std::to_string(w0.size()) +
                                " values, expected " + std::to_string(m));
  }
  Torus torus(f);

  std::vector<cplx> forcing_h(m);
  if (spec.forcing) {
    for (std::size_t i = 0; i < f; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        const double s = 2.0 * kPi * (static_cast<double>(i) + static_cast<double>(j)) / static_cast<double>(f);
        forcing_h[i * f + j] = 0.1 * (std::sin(s) + std::cos(s));
      }
    }
    fft::forward_2d(forcing_h, f, f);
  }

  const double save = spec.save_interval();
  const auto substeps = static_cast<std::size_t>(std::max(1.0, std::round(save / spec.dt)));
  const double dt = save / static_cast<double>(substeps);
  const double nu = spec.nu;

  std::vector<cplx> w_h(w0.begin(), w0.end());
  fft::forward_2d(w_h, f, f);
  std::vector<cplx> adv(m), adv_pred(m), pred(m), tmp(m);
  std::vector<double> decay(m), denom(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double half = (i == 0) ? 0.0 : 0.5 * dt * nu * torus.lap[i];
    decay[i] = 1.0 - half;
    denom[i] = 1.0 / (1.0 + half);
  }

  // Heun predictor-corrector on the explicit advection keeps the march second
  // order in time alongside Crank-Nicolson diffusion.
  std::vector<double> out((spec.n_t + 1) * m);
  std::copy(w0.begin(), w0.end(), out.begin());
  for (std::size_t s = 1; s <= spec.n_t; ++s) {
    for (std::size_t step = 0; step < substeps; ++step) {
      if (spec.nonlinear) {
        torus.advection(w_h, adv);
        for (std::size_t i = 0; i < m; ++i) {
          pred[i] = (decay[i] * w_h[i] + dt * (forcing_h[i] - adv[i])) * denom[i];
        }
        torus.advection(pred, adv_pred);
        for (std::size_t i = 0; i < m; ++i) {
          const cplx a = 0.5 * (adv[i] + adv_pred[i]);
          w_h[i] = (decay[i] * w_h[i] + dt * (forcing_h[i] - a)) * denom[i];
        }
      } else {
        for (std::size_t i = 0; i < m; ++i) w_h[i] = (decay[i] * w_h[i] + dt * forcing_h[i]) * denom[i];
      }
    }
    tmp = w_h;
    fft::inverse_2d(tmp, f, f);
    double* dst = out.data() + s * m;
    for (std::size_t i = 0; i < m; ++i) {
      dst[i] = tmp[i].real();
      if (!std::isfinite(dst[i])) throw SolverDivergence("ns2d_solve", static_cast<double>(s) * save);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// exact linear evolution

FourierSymbol::FourierSymbol(long max_mode, const std::function<cplx(long)>& c) : max_mode_(max_mode) {
  if (max_mode < 0) throw std::invalid_argument("FourierSymbol: negative mode bound");
  values_.resize(static_cast<std::size_t>(2 * max_mode + 1));
  for (long k = -max_mode; k <= max_mode; ++k) {
    const cplx v = c(k);
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
      throw std::invalid_argument("FourierSymbol: non-finite C_" + std::to_string(k));
    }
    values_[static_cast<std::size_t>(k + max_mode)] = v;
  }
}

FourierSymbol FourierSymbol::diffusion(double d, long max_mode) {
  return FourierSymbol(max_mode, [d](long k) { return cplx(-d * static_cast<double>(k * k), 0.0); });
}

cplx FourierSymbol::operator()(long k) const {
  if (k < -max_mode_ || k > max_mode_) {
    throw std::out_of_range("symbol has no entry for mode " + std::to_string(k));
  }
  return values_[static_cast<std::size_t>(k + max_mode_)];
}

spectral::SpectralField linear_evolve(const FourierSymbol& symbol, const spectral::SpectralField& g, double t) {
  if (g.max_mode() > symbol.max_mode()) {
    throw std::invalid_argument("linear_evolve: field band ±" + std::to_string(g.max_mode()) +
                                " exceeds symbol support ±" + std::to_string(symbol.max_mode()));
  }
  spectral::SpectralField out = g;
  for (long k = -g.max_mode(); k <= g.max_mode(); ++k) out[k] = std::exp(symbol(k) * t) * g[k];
  return out;
}

// ---------------------------------------------------------------------------
// batch generation

std::uint64_t trajectory_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over the pair
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

TrajectorySet reduce_resolution(const TrajectorySet& ts, std::size_t target) {
  ts.validate();
  const bool two_d = ts.spatial.size() == 2;
  const std::size_t f = ts.resolution();
  if (target < 2 || target > f) {
    throw std::invalid_argument("reduce_resolution: target " + std::to_string(target) + " must lie in [2, " +
                                std::to_string(f) + "]");
  }
  if (two_d && f % target != 0) throw std::invalid_argument("reduce_resolution: 2D target must divide the resolution");
  TrajectorySet out;
  out.spec = ts.spec;
  out.n_traj = ts.n_traj;
  out.spatial = two_d ? std::vector<std::size_t>{target, target} : std::vector<std::size_t>{target};
  out.times = ts.times;
  out.data.resize(out.n_traj * out.n_times() * out.state_size());
  for (std::size_t b = 0; b < ts.n_traj; ++b)
    for (std::size_t t = 0; t < ts.n_times(); ++t) {
      const auto src = ts.state(b, t);
      const auto r = two_d ? spectral::downsample_2d(src, f, target) : spectral::resample_1d(src, target);
      std::copy(r.begin(), r.end(), out.state(b, t).begin());
    }
  return out;
}

OmegaStats dataset_omega(const TrajectorySet& ts, std::size_t f) {
  ts.validate();
  if (f < 1) throw std::invalid_argument("dataset_omega: f must be >= 1");
  const bool two_d = ts.spatial.size() == 2;
  std::vector<double> w;
  w.reserve(ts.n_traj * ts.n_times());
  for (std::size_t b = 0; b < ts.n_traj; ++b)
    for (std::size_t t = 0; t < ts.n_times(); ++t) {
      const auto s = ts.state(b, t);
      w.push_back(two_d ? spectral::omega_f_samples_2d(s, ts.resolution(), f) : spectral::omega_f_samples(s, f));
    }
  OmegaStats out;
  out.samples = w.size();
  out.mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  double sq = 0.0;
  for (double x : w) sq += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(sq / static_cast<double>(w.size()));
  return out;
}

std::size_t default_threads() {
  if (const char* env = std::getenv("MEMNO_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

TrajectorySet generate(const SolverSpec& spec, std::size_t n_traj, std::size_t out_resolution,
                       std::size_t threads) {
  spec.validate();
  if (n_traj == 0) throw std::invalid_argument("generate: need at least one trajectory");
  const bool two_d = spec.kind == PdeKind::NS2D;
  if (out_resolution < 2 || out_resolution > spec.resolution) {
    throw std::invalid_argument("generate: output resolution " + std::to_string(out_resolution) +
                                " must lie in [2, " + std::to_string(spec.resolution) + "]");
  }
  if (two_d && spec.resolution % out_resolution != 0) {
    throw std::invalid_argument("generate: 2D output resolution must divide the solver resolution");
  }

  TrajectorySet ts;
  ts.spec = spec;
  ts.n_traj = n_traj;
  ts.spatial = two_d ? std::vector<std::size_t>{out_resolution, out_resolution}
                     : std::vector<std::size_t>{out_resolution};
  ts.times = spec.times();
  ts.data.assign(n_traj * ts.n_times() * ts.state_size(), 0.0);

  auto run_one = [&](std::size_t idx) {
    const std::uint64_t seed = trajectory_seed(spec.seed, idx);
    std::vector<double> traj;
    const std::size_t f = spec.resolution;
    switch (spec.kind) {
      case PdeKind::KS:
        traj = ks_solve(spec, sample_sinusoid_ic(seed, spectral::Grid1D(spec.length, f)));
        break;
      case PdeKind::Burgers:
        traj = burgers_solve(spec, sample_sinusoid_ic(seed, spectral::Grid1D(spec.length, f)));
        break;
      case PdeKind::NS2D:
        traj = ns2d_solve(spec, sample_grf_ic_2d(seed, f));
        break;
      case PdeKind::Linear:
        throw std::invalid_argument("generate: linear kind has no trajectory sampler");
    }
    const std::size_t in_state = two_d ? f * f : f;
    for (std::size_t s = 0; s < ts.n_times(); ++s) {
      std::span<const double> src(traj.data() + s * in_state, in_state);
      auto reduced = two_d ? spectral::downsample_2d(src, f, out_resolution) : spectral::resample_1d(src, out_resolution);
      std::copy(reduced.begin(), reduced.end(), ts.state(idx, s).begin());
    }
  };

  const std::size_t workers = std::min(n_traj, threads == 0 ? default_threads() : threads);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_traj; ++i) run_one(i);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n_traj; i += workers) run_one(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    pool.clear();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return ts;
}

}  // namespace memno::pde

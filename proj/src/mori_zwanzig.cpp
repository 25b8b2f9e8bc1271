#include "memno/mori_zwanzig.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>

#include "memno/expm.hpp"

namespace memno::mz {

namespace {

double diagonal_sign(MixingOrientation o) { return o == MixingOrientation::Literal ? 1.0 : -1.0; }

Eigen::Matrix2d markovian_block(double b, MixingOrientation o) {
  Eigen::Matrix2d a;
  a << 0.0, 2.0 * b, b, diagonal_sign(o);
  return a;
}

void check_nonneg_b(double b) {
  if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("mixing strength B must be finite and >= 0");
}

Coeffs2 observed(const Eigen::VectorXd& v) { return {v(0), v(1)}; }

// Implicit-trapezoid march of the observed pair with the memory integral
// summed by composite trapezoid on the same grid.
Coeffs2 quadrature_march(const Eigen::MatrixXd& m, double b, const Coeffs2& a0, double t, std::size_t steps) {
  const Eigen::Index nu = m.rows() - 2;
  const double h = t / static_cast<double>(steps);
  const Eigen::Matrix2d a11 = m.topLeftCorner(2, 2);

  std::vector<double> kernel(steps + 1, 0.0);
  if (nu > 0) {
    const Eigen::MatrixXd e = linalg::expm((h * m.bottomRightCorner(nu, nu)).eval());
    Eigen::VectorXd v = Eigen::VectorXd::Unit(nu, 0);
    for (std::size_t j = 0; j <= steps; ++j) {
      kernel[j] = b * b * v(0);
      v = e * v;
    }
  }

  std::vector<double> x1(steps + 1, 0.0);
  Eigen::Vector2d a(a0[0], a0[1]);
  x1[0] = a(1);
  double memory = 0.0;  // I_n
  Eigen::Matrix2d lhs = Eigen::Matrix2d::Identity() - 0.5 * h * a11;
  lhs(1, 1) -= 0.25 * h * h * kernel[0];
  const auto solver = lhs.partialPivLu();
  for (std::size_t n = 0; n < steps; ++n) {
    // Part of I_{n+1} known before a_{n+1}.
    double partial = 0.5 * kernel[n + 1] * x1[0];
    for (std::size_t j = 1; j <= n; ++j) partial += kernel[n + 1 - j] * x1[j];
    partial *= h;
    Eigen::Vector2d rhs = a + 0.5 * h * (a11 * a);
    rhs(1) += 0.5 * h * (memory + partial);
    a = solver.solve(rhs);
    x1[n + 1] = a(1);
    memory = partial + 0.5 * h * kernel[0] * a(1);
  }
  return {a(0), a(1)};
}

}  // namespace

std::string to_string(MixingOrientation o) { return o == MixingOrientation::Literal ? "literal" : "diffusive"; }

TruncatedOperator build_mixing_operator(double b, std::size_t n, MixingOrientation orientation) {
  check_nonneg_b(b);
  if (n < 1) throw std::invalid_argument("build_mixing_operator: N must be >= 1");
  const auto dim = static_cast<Eigen::Index>(n + 1);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
  const double s = diagonal_sign(orientation);
  for (Eigen::Index i = 0; i < dim; ++i) {
    m(i, i) = s * static_cast<double>(i * i);
    if (i + 1 < dim) {
      m(i, i + 1) = b;
      m(i + 1, i) = b;
    }
  }
  m(0, 1) = 2.0 * b;
  return {b, n, orientation, std::move(m)};
}

Coeffs2 markovian_evolve(double b, const Coeffs2& a0, double t, MixingOrientation orientation) {
  check_nonneg_b(b);
  if (t < 0.0) throw std::invalid_argument("markovian_evolve: t must be >= 0");
  const Eigen::Matrix2d e = linalg::expm((t * markovian_block(b, orientation)).eval());
  const Eigen::Vector2d out = e * Eigen::Vector2d(a0[0], a0[1]);
  return {out(0), out(1)};
}

Eigen::Matrix2d markovian_closed_form(double b, double t, MixingOrientation orientation) {
  const double s = diagonal_sign(orientation);
  const double r = std::sqrt(8.0 * b * b + 1.0);
  const double ep = std::exp(0.5 * (s + r) * t);
  const double em = std::exp(0.5 * (s - r) * t);
  const double g = ep + em;
  const double h = ep - em;
  Eigen::Matrix2d out;
  out << r * g - s * h, 4.0 * b * h, 2.0 * b * h, r * g + s * h;
  return out / (2.0 * r);
}

Coeffs2 memory_evolve_projection(double b, const Coeffs2& a0, double t, std::size_t n_oracle,
                                 MixingOrientation orientation) {
  if (t < 0.0) throw std::invalid_argument("memory_evolve_projection: t must be >= 0");
  const auto op = build_mixing_operator(b, n_oracle, orientation);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(op.m.rows());
  x(0) = a0[0];
  x(1) = a0[1];
  return observed(linalg::expm((t * op.m).eval()) * x);
}

Coeffs2 memory_evolve_quadrature(double b, const Coeffs2& a0, double t, std::size_t quad_steps,
                                 std::size_t n_oracle, MixingOrientation orientation) {
  if (quad_steps < 16) throw std::invalid_argument("memory_evolve_quadrature: quad_steps must be >= 16");
  if (t < 0.0) throw std::invalid_argument("memory_evolve_quadrature: t must be >= 0");
  const auto op = build_mixing_operator(b, n_oracle, orientation);
  if (t == 0.0) return a0;

  std::vector<Eigen::Vector2d> levels;  // coarsest first
  std::size_t steps = quad_steps;
  std::vector<std::size_t> counts{steps};
  while (counts.size() < 4 && steps % 2 == 0 && steps / 2 >= 8) {
    steps /= 2;
    counts.push_back(steps);
  }
  std::reverse(counts.begin(), counts.end());
  for (std::size_t c : counts) {
    const auto r = quadrature_march(op.m, b, a0, t, c);
    levels.emplace_back(r[0], r[1]);
  }
  for (std::size_t j = 1; j < levels.size(); ++j) {
    const double w = std::pow(4.0, static_cast<double>(j));
    for (std::size_t i = levels.size() - 1; i >= j; --i) levels[i] = (w * levels[i] - levels[i - 1]) / (w - 1.0);
  }
  return {levels.back()(0), levels.back()(1)};
}

double basis_norm(const Coeffs2& a) {
  return std::sqrt(2.0 * std::numbers::pi * a[0] * a[0] + 4.0 * std::numbers::pi * a[1] * a[1]);
}

bool MemoryGapReport::all_ok() const {
  return std::all_of(rows.begin(), rows.end(), [](const GapRow& r) { return r.r1_ok && r.r2_ok; });
}

void MemoryGapReport::write_csv(std::ostream& os, bool header) const {
  if (header) os << "B,t,norm_u1,norm_u2,norm_gap,r1,r2,r1_floor,r2_floor,r1_pass,r2_pass,orientation,norm\n";
  for (const auto& r : rows) {
    os << b << ',' << r.t << ',' << r.norm_u1 << ',' << r.norm_u2 << ',' << r.norm_gap << ',' << r.r1 << ','
       << r.r2 << ',' << r1_floor << ',' << r2_floor << ',' << (r.r1_ok ? 1 : 0) << ',' << (r.r2_ok ? 1 : 0) << ','
       << to_string(orientation) << ",l2_e0=2pi_en=4pi\n";
  }
}

MemoryGapReport theorem_gap_report(double b, const Coeffs2& a0, const std::vector<double>& times, double r1_floor,
                                   double r2_floor, std::size_t n_oracle, MixingOrientation orientation) {
  if (!(a0[0] > 0.0) || !(a0[1] > 0.0)) throw std::invalid_argument("theorem_gap_report: a0 must be positive");
  MemoryGapReport rep;
  rep.b = b;
  rep.a0 = a0;
  rep.orientation = orientation;
  rep.r1_floor = r1_floor;
  rep.r2_floor = r2_floor >= 0.0 ? r2_floor : std::numbers::sqrt2 / 200.0 * (a0[0] + a0[1]);
  for (double t : times) {
    if (t <= 0.0) continue;
    const auto u1 = markovian_evolve(b, a0, t, orientation);
    const auto u2 = memory_evolve_projection(b, a0, t, n_oracle, orientation);
    GapRow row;
    row.t = t;
    row.norm_u1 = basis_norm(u1);
    row.norm_u2 = basis_norm(u2);
    row.norm_gap = basis_norm({u1[0] - u2[0], u1[1] - u2[1]});
    if (!std::isfinite(row.norm_u1) || !std::isfinite(row.norm_u2) || !std::isfinite(row.norm_gap))
      throw std::overflow_error("theorem_gap_report: non-finite norm at t=" + std::to_string(t));
    const double bt = b * t;
    row.r1 = bt > 0.0 && row.norm_u1 > 0.0 ? row.norm_gap / (bt * row.norm_u1) : 0.0;
    row.r2 = bt > 0.0 ? row.norm_gap / (bt * std::exp(std::numbers::sqrt2 * bt)) : 0.0;
    row.r1_ok = row.r1 >= rep.r1_floor;
    row.r2_ok = row.r2 >= rep.r2_floor;
    rep.rows.push_back(row);
  }
  return rep;
}

namespace {

double max_rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max(std::abs(b(i)), 1e-300);
    worst = std::max(worst, std::abs(a(i) - b(i)) / scale);
  }
  return worst;
}

bool l1_bounds(const Eigen::Matrix2d& e, double scale) {
  return (e.array() >= 0.1 * scale).all() && (e.array() <= 10.0 * scale).all();
}

}  // namespace

LemmaReport lemma_l1_check(double b, double t) {
  if (!(b > 0.0) || !(t > 0.0)) throw std::invalid_argument("lemma_l1_check: B and t must be > 0");
  LemmaReport rep;
  rep.b = b;
  rep.t = t;
  const Eigen::Matrix2d a = t * markovian_block(b, MixingOrientation::Literal);
  rep.series = linalg::expm_series(a);
  rep.closed = markovian_closed_form(b, t, MixingOrientation::Literal);
  rep.closed_vs_series = max_rel_diff(rep.closed, rep.series);
  rep.scale = std::exp(std::numbers::sqrt2 * b * t);
  rep.min_ratio = rep.series.minCoeff() / rep.scale;
  rep.max_ratio = rep.series.maxCoeff() / rep.scale;
  rep.bounds_ok = l1_bounds(rep.series, rep.scale);

  constexpr double step = 0.05;
  constexpr double b_max = 50.0;
  rep.b_min = b_max;
  for (int i = static_cast<int>(b_max / step); i >= 1; --i) {
    const double bb = i * step;
    const double sc = std::exp(std::numbers::sqrt2 * bb * t);
    if (!l1_bounds(markovian_closed_form(bb, t, MixingOrientation::Literal), sc)) break;
    rep.b_min = bb;
  }
  return rep;
}

Eigen::Matrix3d lemma_l2_closed_form(double b) {
  const double a = std::numbers::sqrt2 * b;
  const double e1 = std::exp(a);
  const double e2 = std::exp(2.0 * a);
  const double pre = 0.25 * std::exp(-a);
  const double corner = pre * (2.0 * e1 + e2 + 1.0);
  const double edge = pre * std::numbers::sqrt2 * (e2 - 1.0);
  const double anti = pre * (-2.0 * e1 + e2 + 1.0);
  const double center = pre * 2.0 * (e2 + 1.0);
  Eigen::Matrix3d m;
  m << corner, edge, anti, edge, center, edge, anti, edge, corner;
  return m;
}

LemmaReport lemma_l2_check(double b) {
  if (!(b > 0.0)) throw std::invalid_argument("lemma_l2_check: B must be > 0");
  LemmaReport rep;
  rep.b = b;
  rep.t = 1.0;
  Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
  a(0, 1) = a(1, 0) = a(1, 2) = a(2, 1) = b;
  rep.series = linalg::expm_series(a);
  rep.closed = lemma_l2_closed_form(b);
  rep.closed_vs_series = max_rel_diff(rep.closed, rep.series);
  rep.scale = std::exp(std::numbers::sqrt2 * b);
  rep.min_ratio = rep.series.minCoeff() / rep.scale;
  rep.max_ratio = rep.series.maxCoeff() / rep.scale;
  rep.bounds_ok = (rep.series.array() >= 0.1 * rep.scale).all();

  constexpr double step = 0.05;
  constexpr double b_max = 50.0;
  rep.b_min = b_max;
  for (int i = static_cast<int>(b_max / step); i >= 1; --i) {
    const double bb = i * step;
    if (!(lemma_l2_closed_form(bb).array() >= 0.1 * std::exp(std::numbers::sqrt2 * bb)).all()) break;
    rep.b_min = bb;
  }
  return rep;
}

GleSystem build_discrete_gle(const pde::FourierSymbol& symbol, const spectral::SpectralField& g, std::size_t f,
                             long band) {
  if (f < 2) throw std::invalid_argument("build_discrete_gle: f must be >= 2");
  const long fc = static_cast<long>(f / 2);
  if (band < fc) throw std::invalid_argument("build_discrete_gle: F must be >= floor(f/2)");
  if (g.max_mode() > band) {
    for (long k = band + 1; k <= g.max_mode(); ++k)
      if (g[k] != cplx{} || g[-k] != cplx{}) throw std::invalid_argument("build_discrete_gle: g not band-limited to F");
  }
  if (symbol.max_mode() < band) throw std::invalid_argument("build_discrete_gle: symbol band smaller than F");

  const Eigen::Index no = 2 * fc + 1;
  const Eigen::Index nf = 2 * band + 1;
  const double fd = static_cast<double>(f);
  const long fl = static_cast<long>(f);

  Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(no, nf);
  Eigen::MatrixXcd e = Eigen::MatrixXcd::Zero(nf, no);
  for (long k = -fc; k <= fc; ++k) {
    for (long kp = -band; kp <= band; ++kp)
      if (((k - kp) % fl + fl) % fl == 0) s(k + fc, kp + band) = 1.0;
    e(k + band, k + fc) = 1.0;
  }
  Eigen::VectorXcd c(nf);
  Eigen::VectorXcd ghat(nf);
  for (long kp = -band; kp <= band; ++kp) {
    c(kp + band) = symbol(kp);
    ghat(kp + band) = g.at(kp);
  }
  const Eigen::MatrixXcd sc = fd * s * c.asDiagonal();

  GleSystem sys;
  sys.f = f;
  sys.fc = fc;
  sys.band = band;
  sys.ubar0 = fd * s * ghat;
  const double norm2 = sys.ubar0.squaredNorm();
  if (norm2 == 0.0) throw std::domain_error("build_discrete_gle: observed spectrum is zero");
  const Eigen::VectorXcd eu = e * sys.ubar0;

  // Unaliased input: every observed class holds at most one occupied mode, so
  // ū = f ĝ on the band and the projection is exact.
  bool unaliased = true;
  for (long k = -fc; k <= fc && unaliased; ++k) {
    int occupied = 0;
    for (long kp = -band; kp <= band; ++kp)
      if (s(k + fc, kp + band) != 0.0 && ghat(kp + band) != cplx{}) ++occupied;
    if (occupied > 1) unaliased = false;
  }
  for (long kp = -band; kp <= band && unaliased; ++kp)
    if (std::abs(kp) > fc && ghat(kp + band) != cplx{}) unaliased = false;
  if (unaliased && f % 2 == 0 && ghat(fc + band) != cplx{} && ghat(-fc + band) != cplx{}) unaliased = false;

  if (unaliased) {
    sys.gamma0 = 1.0 / fd;
    sys.eta0 = 0.0;
    sys.beta0 = Eigen::VectorXcd::Zero(nf);
  } else {
    sys.gamma0 = (eu.adjoint() * ghat)(0) / norm2;
    sys.eta0 = (1.0 - fd * sys.gamma0).real();
    sys.beta0 = ghat - sys.gamma0 * eu;
  }
  sys.a11 = sys.gamma0 * sc * e;
  sys.a12 = sc;
  sys.a21 = sys.gamma0 * (c.asDiagonal() * e - e * sys.a11);
  sys.a22 = Eigen::MatrixXcd(c.asDiagonal()) - sys.gamma0 * e * sys.a12;
  return sys;
}

GleSolution gle_solve(const GleSystem& system, const pde::FourierSymbol& symbol, const spectral::SpectralField& g,
                      double t) {
  const Eigen::Index no = system.a11.rows();
  const Eigen::Index nf = system.a22.rows();
  Eigen::MatrixXcd z(no + nf, no + nf);
  z << system.a11, system.a12, system.a21, system.a22;
  Eigen::VectorXcd x0(no + nf);
  x0 << system.ubar0, system.beta0;

  GleSolution out;
  out.gle = (linalg::expm((t * z).eval()) * x0).head(no);

  const long fl = static_cast<long>(system.f);
  const double fd = static_cast<double>(system.f);
  out.oracle = Eigen::VectorXcd::Zero(no);
  for (long k = -system.fc; k <= system.fc; ++k) {
    cplx acc{};
    for (long kp = -system.band; kp <= system.band; ++kp)
      if (((k - kp) % fl + fl) % fl == 0) acc += std::exp(symbol(kp) * t) * g.at(kp);
    out.oracle(k + system.fc) = fd * acc;
  }
  const double scale = std::max(out.oracle.cwiseAbs().maxCoeff(), 1e-300);
  out.max_rel_deviation = (out.gle - out.oracle).cwiseAbs().maxCoeff() / scale;
  return out;
}

spectral::SpectralField random_band_limited(long band, std::uint64_t seed, bool with_nyquist) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  spectral::SpectralField g(band, 2.0 * std::numbers::pi, spectral::Convention::Continuous);
  g[0] = nd(rng);
  for (long k = 1; k <= band; ++k) {
    if (!with_nyquist && k == band) break;
    g[k] = cplx(nd(rng), nd(rng)) / (1.0 + static_cast<double>(k));
    g[-k] = std::conj(g[k]);
  }
  return g;
}

std::vector<GleCase> gle_random_suite(const std::vector<std::size_t>& fs, std::size_t per_band, std::uint64_t seed,
                                      double diffusion) {
  std::vector<GleCase> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  for (std::size_t f : fs) {
    const long fc = static_cast<long>(f / 2);
    for (long band = fc; band <= 2 * static_cast<long>(f); ++band) {
      const auto sym = pde::FourierSymbol::diffusion(diffusion, band);
      for (std::size_t i = 0; i < per_band; ++i) {
        const auto g = random_band_limited(band, rng());
        const double t = 1.0 - ut(rng);
        const auto sol = gle_solve(build_discrete_gle(sym, g, f, band), sym, g, t);
        out.push_back({f, band, i, t, sol.max_rel_deviation});
      }
    }
  }
  return out;
}

MemoryFreeCheck band_limited_memory_check(std::size_t f, std::size_t cases, std::uint64_t seed, double diffusion) {
  MemoryFreeCheck out;
  std::mt19937_64 rng(seed);
  const long fc = static_cast<long>(f / 2);
  const long band = 2 * static_cast<long>(f);
  const auto sym = pde::FourierSymbol::diffusion(diffusion, band);
  for (std::size_t i = 0; i < cases; ++i) {
    const auto low = random_band_limited(fc, rng(), f % 2 == 1);
    spectral::SpectralField g(band, low.length(), spectral::Convention::Continuous);
    for (long k = -fc; k <= fc; ++k) g[k] = low[k];
    const auto sys = build_discrete_gle(sym, g, f, band);
    out.beta0 = std::max(out.beta0, sys.beta0.cwiseAbs().maxCoeff());
    out.eta0 = std::max(out.eta0, std::abs(sys.eta0));
    out.gamma0 = std::max(out.gamma0, std::abs(sys.gamma0 - 1.0 / static_cast<double>(f)));
  }
  return out;
}

}  // namespace memno::mz

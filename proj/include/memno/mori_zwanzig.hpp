#pragma once

// Executable Mori-Zwanzig analysis.
//
// Part one is the mixing operator L = -Δ + B(e^{-ix} + e^{ix}) on the basis
// e_0 = 1, e_n = e^{inx} + e^{-inx}, observed through P_1 (modes 0 and 1).
// Part two is the discrete Linear GLE that Fourier aliasing induces on the
// observed DFT coefficients of a linear constant-coefficient PDE.

#include <Eigen/Dense>

#include <array>
#include <complex>
#include <cstdint>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "memno/pde.hpp"
#include "memno/spectral.hpp"

namespace memno::mz {

using cplx = std::complex<double>;
using Coeffs2 = std::array<double, 2>;

// Literal: the operator as written, diagonal +n² (backward heat, unbounded
// growth with N). Diffusive: diagonal -n², the well-posed orientation on
// which the truncated system converges.
enum class MixingOrientation { Literal, Diffusive };

std::string to_string(MixingOrientation o);

struct TruncatedOperator {
  double b = 0.0;
  std::size_t n = 0;
  MixingOrientation orientation = MixingOrientation::Literal;
  Eigen::MatrixXd m;  // (N+1) × (N+1)
};

TruncatedOperator build_mixing_operator(double b, std::size_t n,
                                        MixingOrientation orientation = MixingOrientation::Literal);

// exp(t [[0, 2B], [B, ±1]]) a0 by Padé expm.
Coeffs2 markovian_evolve(double b, const Coeffs2& a0, double t,
                         MixingOrientation orientation = MixingOrientation::Literal);
// Closed form of exp(t [[0, 2B], [B, s]]) in terms of g(B,t), h(B,t).
Eigen::Matrix2d markovian_closed_form(double b, double t,
                                      MixingOrientation orientation = MixingOrientation::Literal);

// P_1 exp(t L_N) (a0, 0, ..., 0).
Coeffs2 memory_evolve_projection(double b, const Coeffs2& a0, double t, std::size_t n_oracle = 64,
                                 MixingOrientation orientation = MixingOrientation::Diffusive);

// Direct march of the GLE with the memory integral done by composite trapezoid
// quadrature, Romberg-extrapolated over quad_steps, quad_steps/2, ... .
Coeffs2 memory_evolve_quadrature(double b, const Coeffs2& a0, double t, std::size_t quad_steps = 256,
                                 std::size_t n_oracle = 64,
                                 MixingOrientation orientation = MixingOrientation::Diffusive);

// ‖u‖ with ‖e_0‖² = 2π and ‖e_n‖² = 4π.
double basis_norm(const Coeffs2& a);

struct GapRow {
  double t = 0.0;
  double norm_u1 = 0.0;  // memoryless
  double norm_u2 = 0.0;  // with memory
  double norm_gap = 0.0;
  double r1 = 0.0;  // ‖u1-u2‖ / (Bt‖u1‖)
  double r2 = 0.0;  // ‖u1-u2‖ / (Bt e^{√2Bt})
  bool r1_ok = true;
  bool r2_ok = true;
};

struct MemoryGapReport {
  double b = 0.0;
  Coeffs2 a0{};
  double r1_floor = 0.0;
  double r2_floor = 0.0;
  MixingOrientation orientation = MixingOrientation::Diffusive;
  std::vector<GapRow> rows;

  bool all_ok() const;
  void write_csv(std::ostream& os, bool header = true) const;
};

// r2 floor defaults to the proof's √2/200·(a0+a1) when negative.
MemoryGapReport theorem_gap_report(double b, const Coeffs2& a0, const std::vector<double>& times,
                                   double r1_floor = 0.0, double r2_floor = -1.0, std::size_t n_oracle = 64,
                                   MixingOrientation orientation = MixingOrientation::Diffusive);

struct LemmaReport {
  double b = 0.0;
  double t = 0.0;
  Eigen::MatrixXd series;
  Eigen::MatrixXd closed;
  double closed_vs_series = 0.0;  // max relative entry difference
  double scale = 0.0;             // e^{√2Bt}
  double min_ratio = 0.0;         // min entry / scale
  double max_ratio = 0.0;         // max entry / scale
  bool bounds_ok = false;
  double b_min = 0.0;  // smallest B on a 0.05 grid beyond which the bounds hold (at this t for l1)
};

LemmaReport lemma_l1_check(double b, double t);
LemmaReport lemma_l2_check(double b);
// Closed form of exp([[0,B,0],[B,0,B],[0,B,0]]).
Eigen::Matrix3d lemma_l2_closed_form(double b);

// --- discrete Linear GLE ---

struct GleSystem {
  std::size_t f = 0;
  long fc = 0;  // ⌊f/2⌋
  long band = 0;  // F
  cplx gamma0;
  double eta0 = 0.0;
  Eigen::VectorXcd ubar0;  // observed, indices -fc..fc
  Eigen::VectorXcd beta0;  // full band, indices -F..F
  Eigen::MatrixXcd a11, a12, a21, a22;
};

GleSystem build_discrete_gle(const pde::FourierSymbol& symbol, const spectral::SpectralField& g, std::size_t f,
                             long band);

struct GleSolution {
  Eigen::VectorXcd gle;
  Eigen::VectorXcd oracle;
  double max_rel_deviation = 0.0;
};

GleSolution gle_solve(const GleSystem& system, const pde::FourierSymbol& symbol, const spectral::SpectralField& g,
                      double t);

// Random real inputs with Gaussian coefficients ĝ_k ~ 1/(1+|k|) on |k| ≤ band.
spectral::SpectralField random_band_limited(long band, std::uint64_t seed, bool with_nyquist = true);

struct GleCase {
  std::size_t f = 0;
  long band = 0;
  std::size_t index = 0;
  double t = 0.0;
  double deviation = 0.0;
};

// gle_solve against the aliasing oracle for the diffusion symbol, `per_band`
// random inputs for every f in `fs` and every F in f_c..2f, t ~ U(0, 1].
std::vector<GleCase> gle_random_suite(const std::vector<std::size_t>& fs, std::size_t per_band, std::uint64_t seed,
                                      double diffusion = 1.0);

// Largest |β₀|, |η₀| and |γ₀ - 1/f| over random inputs band-limited to the
// observed modes (Nyquist mode left empty for even f).
struct MemoryFreeCheck {
  double beta0 = 0.0;
  double eta0 = 0.0;
  double gamma0 = 0.0;
};
MemoryFreeCheck band_limited_memory_check(std::size_t f, std::size_t cases, std::uint64_t seed,
                                          double diffusion = 1.0);

}  // namespace memno::mz

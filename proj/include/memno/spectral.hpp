#pragma once

// Fourier conventions, truncation, aliasing and resampling on periodic grids.
//
// Discrete spectra use the unnormalised DFT, ū_k = Σ_n u(x_n) e^{-2πink/f}.
// Continuous spectra hold the coefficients â_k of u(x) = Σ_k â_k e^{2πikx/L}.

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace memno::spectral {

using cplx = std::complex<double>;

class Grid1D {
 public:
  Grid1D(double length, std::size_t resolution);

  double length() const { return length_; }
  std::size_t resolution() const { return f_; }
  double spacing() const { return length_ / static_cast<double>(f_); }
  double point(std::size_t i) const { return static_cast<double>(i) * spacing(); }
  std::vector<double> points() const;

 private:
  double length_;
  std::size_t f_;
};

enum class Convention { Continuous, Discrete };

// Coefficients indexed by k ∈ {-K, ..., K}.
class SpectralField {
 public:
  SpectralField(long max_mode, double length, Convention convention);
  SpectralField(long max_mode, double length, Convention convention, std::vector<cplx> coeffs);

  long max_mode() const { return max_mode_; }
  double length() const { return length_; }
  Convention convention() const { return convention_; }

  cplx operator[](long k) const;
  cplx& operator[](long k);
  cplx at(long k) const;  // zero outside the stored band

  const std::vector<cplx>& coefficients() const { return coeffs_; }
  double energy() const;
  bool is_real(double tol = 1e-12) const;

  // Evaluates Σ_k â_k e^{2πikx/L} on the grid (continuous convention only).
  std::vector<double> sample(const Grid1D& grid) const;

 private:
  std::size_t index(long k) const;

  long max_mode_;
  double length_;
  Convention convention_;
  std::vector<cplx> coeffs_;
};

SpectralField dft(std::span<const double> values, double length);
// Inverse of dft on f points. Residue classes mod f are read once, from the
// representative in the signed band.
std::vector<double> idft(const SpectralField& field, std::size_t f);

// Continuous coefficients estimated from a discrete spectrum: â_k = ū_k / f,
// with the even-f Nyquist bin split evenly between ±f/2.
SpectralField to_continuous(const SpectralField& discrete, std::size_t f);

SpectralField fourier_truncate(const SpectralField& field, long k);

// Poisson summation: ū_k = f Σ_{k' ≡ k (mod f)} â_{k'} for |k| ≤ ⌊f/2⌋.
SpectralField alias_sum(const SpectralField& continuous, std::size_t f);

class ZeroEnergyError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Fraction of energy in modes |n| > ⌊f/2⌋.
double omega_f(const SpectralField& field, std::size_t f);
// ω_f of a real periodic signal, estimated from its own samples.
double omega_f_samples(std::span<const double> samples, std::size_t f);
// 2D analogue on an n×n row-major field; a mode is unobserved when
// max(|k1|, |k2|) > ⌊f/2⌋.
double omega_f_samples_2d(std::span<const double> samples, std::size_t n, std::size_t f);

// Periodic cubic-spline interpolation onto target_f equispaced points.
std::vector<double> resample_1d(std::span<const double> samples, std::size_t target_f);

// Stride subsampling of an f×f row-major field, anchored at index 0.
std::vector<double> downsample_2d(std::span<const double> samples, std::size_t f, std::size_t target_f);

}  // namespace memno::spectral

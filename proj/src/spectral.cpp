#include "memno/spectral.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "memno/fft.hpp"

namespace memno::spectral {

namespace {

long floor_mod(long a, long m) {
  const long r = a % m;
  return r < 0 ? r + m : r;
}

}  // namespace

Grid1D::Grid1D(double length, std::size_t resolution) : length_(length), f_(resolution) {
  if (resolution < 2) throw std::invalid_argument("Grid1D: resolution must be at least 2");
  if (!(length > 0.0)) throw std::invalid_argument("Grid1D: length must be positive");
}

std::vector<double> Grid1D::points() const {
  std::vector<double> x(f_);
  for (std::size_t i = 0; i < f_; ++i) x[i] = point(i);
  return x;
}

SpectralField::SpectralField(long max_mode, double length, Convention convention)
    : SpectralField(max_mode, length, convention,
                    std::vector<cplx>(static_cast<std::size_t>(2 * std::max(max_mode, 0L) + 1))) {}

SpectralField::SpectralField(long max_mode, double length, Convention convention, std::vector<cplx> coeffs)
    : max_mode_(max_mode), length_(length), convention_(convention), coeffs_(std::move(coeffs)) {
  if (max_mode < 0) throw std::invalid_argument("SpectralField: negative mode bound");
  if (coeffs_.size() != static_cast<std::size_t>(2 * max_mode + 1)) {
    throw std::invalid_argument("SpectralField: expected " + std::to_string(2 * max_mode + 1) +
                                " coefficients, got " + std::to_string(coeffs_.size()));
  }
}

std::size_t SpectralField::index(long k) const {
  if (k < -max_mode_ || k > max_mode_) {
    throw std::out_of_range("mode " + std::to_string(k) + " outside band ±" + std::to_string(max_mode_));
  }
  return static_cast<std::size_t>(k + max_mode_);
}

cplx SpectralField::operator[](long k) const { return coeffs_[index(k)]; }
cplx& SpectralField::operator[](long k) { return coeffs_[index(k)]; }

cplx SpectralField::at(long k) const {
  return (k < -max_mode_ || k > max_mode_) ? cplx{} : coeffs_[static_cast<std::size_t>(k + max_mode_)];
}

double SpectralField::energy() const {
  double e = 0.0;
  for (const auto& c : coeffs_) e += std::norm(c);
  return e;
}

bool SpectralField::is_real(double tol) const {
  for (long k = 0; k <= max_mode_; ++k) {
    if (std::abs((*this)[-k] - std::conj((*this)[k])) > tol) return false;
  }
  return true;
}

std::vector<double> SpectralField::sample(const Grid1D& grid) const {
  if (convention_ != Convention::Continuous) {
    throw std::logic_error("sample() needs continuous-convention coefficients");
  }
  std::vector<double> out(grid.resolution());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = grid.point(i);
    cplx acc{};
    for (long k = -max_mode_; k <= max_mode_; ++k) {
      const double th = 2.0 * std::numbers::pi * static_cast<double>(k) * x / grid.length();
      acc += (*this)[k] * cplx(std::cos(th), std::sin(th));
    }
    out[i] = acc.real();
  }
  return out;
}

SpectralField dft(std::span<const double> values, double length) {
  if (values.empty()) throw std::invalid_argument("dft: empty input");
  const auto n = static_cast<long>(values.size());
  const auto bins = fft::forward_real(values);
  SpectralField out(n / 2, length, Convention::Discrete);
  for (long k = -n / 2; k <= n / 2; ++k) out[k] = bins[static_cast<std::size_t>(floor_mod(k, n))];
  return out;
}

std::vector<double> idft(const SpectralField& field, std::size_t f) {
  if (f == 0) throw std::invalid_argument("idft: zero length");
  std::vector<cplx> bins(f);
  for (std::size_t b = 0; b < f; ++b) bins[b] = field.at(fft::signed_mode(b, f));
  return fft::inverse_real(bins);
}

SpectralField to_continuous(const SpectralField& discrete, std::size_t f) {
  const long n = static_cast<long>(f);
  const long K = n / 2;
  SpectralField out(K, discrete.length(), Convention::Continuous);
  const double inv = 1.0 / static_cast<double>(f);
  for (long k = -K; k <= K; ++k) out[k] = discrete.at(k) * inv;
  if (n % 2 == 0) {
    const cplx nyq = discrete.at(K) * (0.5 * inv);
    out[K] = nyq;
    out[-K] = std::conj(nyq);
  }
  return out;
}

SpectralField fourier_truncate(const SpectralField& field, long k) {
  if (k < 0) throw std::invalid_argument("fourier_truncate: negative cutoff");
  SpectralField out = field;
  for (long n = -field.max_mode(); n <= field.max_mode(); ++n) {
    if (std::abs(n) > k) out[n] = 0.0;
  }
  return out;
}

SpectralField alias_sum(const SpectralField& continuous, std::size_t f) {
  if (f == 0) throw std::invalid_argument("alias_sum: zero resolution");
  const long n = static_cast<long>(f);
  std::vector<cplx> by_residue(f);
  for (long k = -continuous.max_mode(); k <= continuous.max_mode(); ++k) {
    by_residue[static_cast<std::size_t>(floor_mod(k, n))] += continuous[k];
  }
  SpectralField out(n / 2, continuous.length(), Convention::Discrete);
  for (long k = -n / 2; k <= n / 2; ++k) {
    out[k] = static_cast<double>(f) * by_residue[static_cast<std::size_t>(floor_mod(k, n))];
  }
  return out;
}

double omega_f(const SpectralField& field, std::size_t f) {
  const long cutoff = static_cast<long>(f / 2);
  double total = 0.0;
  double unobserved = 0.0;
  for (long k = -field.max_mode(); k <= field.max_mode(); ++k) {
    const double e = std::norm(field[k]);
    total += e;
    if (std::abs(k) > cutoff) unobserved += e;
  }
  if (total == 0.0) throw ZeroEnergyError("omega_f: field has zero energy");
  return unobserved / total;
}

double omega_f_samples(std::span<const double> samples, std::size_t f) {
  return omega_f(to_continuous(dft(samples, 1.0), samples.size()), f);
}

double omega_f_samples_2d(std::span<const double> samples, std::size_t n, std::size_t f) {
  if (n == 0 || samples.size() != n * n) {
    throw std::invalid_argument("omega_f_samples_2d: expected " + std::to_string(n) + "x" + std::to_string(n) +
                                " samples, got " + std::to_string(samples.size()));
  }
  std::vector<cplx> field(samples.begin(), samples.end());
  fft::forward_2d(field, n, n);
  const long cutoff = static_cast<long>(f / 2);
  double total = 0.0;
  double unobserved = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const long k1 = std::abs(fft::signed_mode(i, n));
    for (std::size_t j = 0; j < n; ++j) {
      const long k2 = std::abs(fft::signed_mode(j, n));
      const double e = std::norm(field[i * n + j]);
      total += e;
      if (std::max(k1, k2) > cutoff) unobserved += e;
    }
  }
  if (total == 0.0) throw ZeroEnergyError("omega_f_samples_2d: field has zero energy");
  return unobserved / total;
}

std::vector<double> resample_1d(std::span<const double> samples, std::size_t target_f) {
  const std::size_t n = samples.size();
  if (target_f < 2) throw std::invalid_argument("resample_1d: target resolution must be at least 2");
  if (target_f > n) {
    throw std::invalid_argument("resample_1d: target " + std::to_string(target_f) + " exceeds source " +
                                std::to_string(n));
  }
  if (target_f == n) return {samples.begin(), samples.end()};

  // Second derivatives from the circulant system M_{i-1} + 4M_i + M_{i+1} = 6Δ²y_i,
  // diagonalised by the DFT.
  std::vector<cplx> y(samples.begin(), samples.end());
  fft::forward(y);
  for (std::size_t k = 0; k < n; ++k) {
    const double c = std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    y[k] *= 6.0 * (2.0 * c - 2.0) / (4.0 + 2.0 * c);
  }
  fft::inverse(y);

  std::vector<double> out(target_f);
  const double ratio = static_cast<double>(n) / static_cast<double>(target_f);
  for (std::size_t j = 0; j < target_f; ++j) {
    const double x = static_cast<double>(j) * ratio;
    const auto i = static_cast<std::size_t>(std::floor(x)) % n;
    const std::size_t ip = (i + 1) % n;
    const double t = x - std::floor(x);
    const double s = 1.0 - t;
    const double mi = y[i].real();
    const double mp = y[ip].real();
    out[j] = s * samples[i] + t * samples[ip] + ((s * s * s - s) * mi + (t * t * t - t) * mp) / 6.0;
  }
  return out;
}

std::vector<double> downsample_2d(std::span<const double> samples, std::size_t f, std::size_t target_f) {
  if (samples.size() != f * f) {
    throw std::invalid_argument("downsample_2d: expected " + std::to_string(f * f) + " samples, got " +
                                std::to_string(samples.size()));
  }
  if (target_f == 0 || f % target_f != 0) {
    throw std::invalid_argument("downsample_2d: target " + std::to_string(target_f) + " does not divide " +
                                std::to_string(f));
  }
  const std::size_t stride = f / target_f;
  std::vector<double> out(target_f * target_f);
  for (std::size_t i = 0; i < target_f; ++i) {
    for (std::size_t j = 0; j < target_f; ++j) out[i * target_f + j] = samples[(i * stride) * f + j * stride];
  }
  return out;
}

}  // namespace memno::spectral

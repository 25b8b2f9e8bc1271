#pragma once

// Thin FFTW3 wrapper. Forward transforms are unnormalised; inverse transforms
// include the 1/n (or 1/(n0*n1)) factor.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace memno::fft {

using cplx = std::complex<double>;

void forward(std::span<cplx> line);
void inverse(std::span<cplx> line);

// Transforms every line along the middle axis of a row-major block
// [outer, n, inner]. Unnormalised in both directions; callers scale.
void transform_axis(cplx* data, std::size_t outer, std::size_t n, std::size_t inner, bool inverse);

// Row-major n0 x n1 field.
void forward_2d(std::span<cplx> field, std::size_t n0, std::size_t n1);
void inverse_2d(std::span<cplx> field, std::size_t n0, std::size_t n1);

std::vector<cplx> forward_real(std::span<const double> samples);
std::vector<double> inverse_real(std::span<const cplx> spectrum);  // real part

// Signed wavenumber of DFT bin `index` for length n (n/2 maps to -n/2 when n even).
inline long signed_mode(std::size_t index, std::size_t n) {
  const long i = static_cast<long>(index);
  const long len = static_cast<long>(n);
  return (2 * i >= len) ? i - len : i;
}

}  // namespace memno::fft

#pragma once

// Dense matrix exponentials for real and complex Eigen matrices.
//
// expm uses a degree-13 Padé approximant with scaling and squaring
// (Higham 2005). expm_series is an independent Taylor-series route (with its
// own scaling and squaring) used as a cross-check.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace memno::linalg {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Derived>
Mat<typename Derived::Scalar> expm(const Eigen::MatrixBase<Derived>& a_in) {
  using Scalar = typename Derived::Scalar;
  using M = Mat<Scalar>;
  if (a_in.rows() != a_in.cols()) throw std::invalid_argument("expm: matrix must be square");
  const Eigen::Index n = a_in.rows();
  if (n == 0) return M(0, 0);

  static constexpr double b[14] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                   1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                   670442572800.0,      33522128640.0,       1323241920.0,
                                   40840800.0,          960960.0,            16380.0,
                                   182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;

  M a = a_in;
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  if (!std::isfinite(norm1)) throw std::domain_error("expm: non-finite matrix");
  int s = 0;
  if (norm1 > theta13) s = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  if (s > 0) a /= static_cast<double>(1LL << std::min(s, 62));

  const M id = M::Identity(n, n);
  const M a2 = a * a;
  const M a4 = a2 * a2;
  const M a6 = a4 * a2;
  const M u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id;
  const M u = a * u_inner;
  const M v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
  M r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < s; ++i) r = r * r;
  return r;
}

template <typename Derived>
Mat<typename Derived::Scalar> expm_series(const Eigen::MatrixBase<Derived>& a_in, int terms = 40) {
  using Scalar = typename Derived::Scalar;
  using M = Mat<Scalar>;
  if (a_in.rows() != a_in.cols()) throw std::invalid_argument("expm_series: matrix must be square");
  M a = a_in;
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm1 > 0.5) s = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  if (s > 0) a /= static_cast<double>(1LL << std::min(s, 62));
  M sum = M::Identity(a.rows(), a.cols());
  M term = sum;
  for (int k = 1; k <= terms; ++k) {
    term = (term * a) / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

}  // namespace memno::linalg

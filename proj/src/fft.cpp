#include "memno/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

namespace memno::fft {
namespace {

struct PlanKey {
  std::size_t n0;
  std::size_t n1;
  std::size_t inner;
  int sign;
  auto operator<=>(const PlanKey&) const = default;
};

class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  // inner > 1 plans `inner` interleaved transforms of length n0 at stride inner.
  fftw_plan get(std::size_t n0, std::size_t n1, int sign, std::size_t inner = 1) {
    std::lock_guard lock(mutex_);
    const PlanKey key{n0, n1, inner, sign};
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const std::size_t total = n0 * (n1 == 0 ? 1 : n1) * inner;
    auto* buffer = fftw_alloc_complex(total);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan plan = nullptr;
    if (inner > 1) {
      const int n = static_cast<int>(n0);
      const int howmany = static_cast<int>(inner);
      plan = fftw_plan_many_dft(1, &n, howmany, buffer, nullptr, howmany, 1, buffer, nullptr, howmany, 1, sign,
                                flags);
    } else if (n1 == 0) {
      plan = fftw_plan_dft_1d(static_cast<int>(n0), buffer, buffer, sign, flags);
    } else {
      plan = fftw_plan_dft_2d(static_cast<int>(n0), static_cast<int>(n1), buffer, buffer, sign, flags);
    }
    fftw_free(buffer);
    if (plan == nullptr) throw std::runtime_error("fftw planning failed");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<PlanKey, fftw_plan> plans_;
};

PlanCache& cache() {
  static PlanCache instance;
  return instance;
}

void run(cplx* data, std::size_t n0, std::size_t n1, int sign) {
  auto* raw = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(cache().get(n0, n1, sign), raw, raw);
}

}  // namespace

void forward(std::span<cplx> line) {
  if (line.empty()) throw std::invalid_argument("fft of an empty line");
  run(line.data(), line.size(), 0, FFTW_FORWARD);
}

void inverse(std::span<cplx> line) {
  if (line.empty()) throw std::invalid_argument("ifft of an empty line");
  run(line.data(), line.size(), 0, FFTW_BACKWARD);
  const double s = 1.0 / static_cast<double>(line.size());
  for (auto& v : line) v *= s;
}

void transform_axis(cplx* data, std::size_t outer, std::size_t n, std::size_t inner, bool inv) {
  if (n == 0) throw std::invalid_argument("fft along a zero-length axis");
  const int sign = inv ? FFTW_BACKWARD : FFTW_FORWARD;
  if (inner == 1) {
    fftw_plan plan = cache().get(n, 0, sign);
    for (std::size_t o = 0; o < outer; ++o) {
      auto* raw = reinterpret_cast<fftw_complex*>(data + o * n);
      fftw_execute_dft(plan, raw, raw);
    }
    return;
  }
  fftw_plan plan = cache().get(n, 0, sign, inner);
  for (std::size_t o = 0; o < outer; ++o) {
    auto* raw = reinterpret_cast<fftw_complex*>(data + o * n * inner);
    fftw_execute_dft(plan, raw, raw);
  }
}

void forward_2d(std::span<cplx> field, std::size_t n0, std::size_t n1) {
  if (field.size() != n0 * n1) throw std::invalid_argument("fft_2d: size mismatch");
  run(field.data(), n0, n1, FFTW_FORWARD);
}

void inverse_2d(std::span<cplx> field, std::size_t n0, std::size_t n1) {
  if (field.size() != n0 * n1) throw std::invalid_argument("ifft_2d: size mismatch");
  run(field.data(), n0, n1, FFTW_BACKWARD);
  const double s = 1.0 / static_cast<double>(n0 * n1);
  for (auto& v : field) v *= s;
}

std::vector<cplx> forward_real(std::span<const double> samples) {
  std::vector<cplx> out(samples.begin(), samples.end());
  forward(out);
  return out;
}

std::vector<double> inverse_real(std::span<const cplx> spectrum) {
  std::vector<cplx> tmp(spectrum.begin(), spectrum.end());
  inverse(tmp);
  std::vector<double> out(tmp.size());
  for (std::size_t i = 0; i < tmp.size(); ++i) out[i] = tmp[i].real();
  return out;
}

}  // namespace memno::fft

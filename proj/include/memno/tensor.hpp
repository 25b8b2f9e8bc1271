#pragma once

// Dense double-precision tensors with a reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared Node. Nodes created by operations
// remember their parents and a backward closure when any parent requires a
// gradient; otherwise they are plain values. Complex data is stored
// interleaved (trailing extent 2 holding re, im) so each channel gets its own
// gradient entry on the tape.

#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace memno::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Lazily sized gradient buffer.
  std::span<double> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Writable view for leaves (parameter updates, fixtures). Never mutate
  // values that an existing tape still refers to.
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double at(std::size_t flat) const { return node_->value.at(flat); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  // Detached copy of the values, a fresh leaf.
  Tensor detach(bool requires_grad = false) const;

  // Reverse sweep from a scalar root. Leaf gradients accumulate across calls.
  void backward() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Interleaved complex tensor. The underlying real tensor has shape
// shape() + {2}.
class ComplexTensor {
 public:
  ComplexTensor() = default;
  explicit ComplexTensor(Tensor interleaved);

  static ComplexTensor zeros(Shape shape, bool requires_grad = false);
  static ComplexTensor from(Shape shape, const std::vector<std::complex<double>>& values,
                            bool requires_grad = false);

  Shape shape() const;
  std::size_t numel() const { return raw_.numel() / 2; }
  const Tensor& raw() const { return raw_; }
  Tensor& raw() { return raw_; }
  std::complex<double> at(std::size_t flat) const {
    return {raw_.at(2 * flat), raw_.at(2 * flat + 1)};
  }
  std::vector<std::complex<double>> values() const;
  bool requires_grad() const { return raw_.requires_grad(); }

 private:
  Tensor raw_;
};

// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Keeps large freed buffers in the process heap instead of returning them to
// the OS, so repeated forward/backward passes stop paying for page faults.
void retain_freed_memory();

// Builds an op result. `backward` is attached only when recording is on and
// a parent needs a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward);

// ---- elementwise and scalar ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor gelu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K] x [K,N]
// x[..., I] * W[I, O] (+ bias[O]) applied over every leading index.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// ---- layout ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank 2
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Broadcast a tensor over new leading dimensions: result shape = lead + a.shape.
Tensor expand_leading(const Tensor& a, const Shape& lead);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis);  // removes the axis

// ---- complex ----
ComplexTensor to_complex(const Tensor& re);
ComplexTensor make_complex(const Tensor& re, const Tensor& im);
Tensor real(const ComplexTensor& z);
Tensor imag(const ComplexTensor& z);
ComplexTensor cadd(const ComplexTensor& a, const ComplexTensor& b);
ComplexTensor cmul(const ComplexTensor& a, const ComplexTensor& b);
ComplexTensor cnarrow(const ComplexTensor& z, std::size_t axis, std::size_t start,
                      std::size_t length);
ComplexTensor creshape(const ComplexTensor& z, Shape shape);

// Unnormalised forward DFT along `axis`; the inverse carries the 1/n factor.
ComplexTensor fft(const Tensor& x, std::size_t axis);
ComplexTensor fft(const ComplexTensor& z, std::size_t axis);
ComplexTensor ifft(const ComplexTensor& z, std::size_t axis);
// Real-input transforms. rfft keeps modes 0..n/2; irfft accepts m <= n/2+1
// leading modes (missing ones are zero) and ignores the imaginary parts of
// the zero and Nyquist modes.
ComplexTensor rfft(const Tensor& x, std::size_t axis);
Tensor irfft(const ComplexTensor& z, std::size_t axis, std::size_t n);

// Per-mode complex matrix product.
// x: [N, K, M, I], w: [K, I, O]  ->  [N, K, M, O]
ComplexTensor spectral_linear(const ComplexTensor& x, const ComplexTensor& w);

// ---- testing utility ----
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

// max_i |analytic_i - central_i| / max(1, |central_i|) for scalar f.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h = 1e-5);

}  // namespace memno::ad

#include "memno/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "memno/fft.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace memno::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CRowMat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using cplx = std::complex<double>;

namespace {

thread_local bool g_grad_enabled = true;

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Complex view over an interleaved buffer.
cplx* as_complex(std::vector<double>& v) { return reinterpret_cast<cplx*>(v.data()); }

Shape complex_raw_shape(Shape shape) {
  shape.push_back(2);
  return shape;
}

void require_complex_raw(const Tensor& t, const char* op) {
  if (t.rank() == 0 || t.shape().back() != 2) {
    throw ShapeError(std::string(op) + ": expected trailing extent 2, got " + shape_str(t.shape()));
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = memno::ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (memno::ad::numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(memno::ad::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::detach(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(shape()));
  if (!requires_grad()) throw std::logic_error("backward: root is not on the tape");

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf) n->grad.clear();
  }
  node_->grad_buffer()[0] += 1.0;
  // Interior gradients are released as soon as they have been propagated.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf) continue;
    if (n->backward && !n->grad.empty()) n->backward(*n);
    if (n != node_.get()) std::vector<double>().swap(n->grad);
  }
}

// ---------------------------------------------------------------------------
// ComplexTensor

ComplexTensor::ComplexTensor(Tensor interleaved) : raw_(std::move(interleaved)) {
  require_complex_raw(raw_, "ComplexTensor");
}

ComplexTensor ComplexTensor::zeros(Shape shape, bool requires_grad) {
  return ComplexTensor(Tensor::zeros(complex_raw_shape(std::move(shape)), requires_grad));
}

ComplexTensor ComplexTensor::from(Shape shape, const std::vector<cplx>& values, bool requires_grad) {
  std::vector<double> raw(2 * values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    raw[2 * i] = values[i].real();
    raw[2 * i + 1] = values[i].imag();
  }
  return ComplexTensor(Tensor::from(complex_raw_shape(std::move(shape)), std::move(raw), requires_grad));
}

Shape ComplexTensor::shape() const {
  Shape s = raw_.shape();
  s.pop_back();
  return s;
}

std::vector<cplx> ComplexTensor::values() const {
  const auto d = raw_.data();
  return {reinterpret_cast<const cplx*>(d.data()), reinterpret_cast<const cplx*>(d.data()) + numel()};
}

// ---------------------------------------------------------------------------
// recording control

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void retain_freed_memory() {
#if defined(__GLIBC__)
  // glibc caps M_MMAP_THRESHOLD at 32 MiB, so mmap is switched off instead.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward) {
  if (memno::ad::numel(shape) != value.size()) {
    throw ShapeError("internal: result shape " + shape_str(shape) + " does not match buffer");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.defined() && p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->is_leaf = false;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd bwd) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return make_result(a.shape(), std::move(out), {a}, [bwd](Node& self) {
    Node& p = *self.parents[0];
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bwd(p.value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same(a, b, "div");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  const auto x = a.data();
  // Φ(x) is kept for the backward pass; erf dominates the cost of this op.
  auto cdf = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*cdf)[i] = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
    out[i] = x[i] * (*cdf)[i];
  }
  return make_result(a.shape(), std::move(out), {a}, [cdf, inv_sqrt_2pi](Node& self) {
    Node& p = *self.parents[0];
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double xi = p.value[i];
      g[i] += self.grad[i] * ((*cdf)[i] + xi * inv_sqrt_2pi * std::exp(-0.5 * xi * xi));
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  Eigen::Map<RowMat>(out.data(), m, n).noalias() =
      Eigen::Map<const RowMat>(a.data().data(), m, k) * Eigen::Map<const RowMat>(b.data().data(), k, n);
  return make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    Eigen::Map<const RowMat> g(self.grad.data(), m, n);
    if (pa.requires_grad) {
      Eigen::Map<RowMat>(pa.grad_buffer().data(), m, k).noalias() +=
          g * Eigen::Map<const RowMat>(pb.value.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      Eigen::Map<RowMat>(pb.grad_buffer().data(), k, n).noalias() +=
          Eigen::Map<const RowMat>(pa.value.data(), m, k).transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() == 0 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " x " +
                     shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(0);
  const std::size_t outd = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outd)) {
    throw ShapeError("linear: bias shape " + shape_str(bias.shape()) + " does not match output " +
                     std::to_string(outd));
  }
  const auto rows = static_cast<Eigen::Index>(x.numel() / in);
  const auto ei = static_cast<Eigen::Index>(in);
  const auto eo = static_cast<Eigen::Index>(outd);
  Shape shape = x.shape();
  shape.back() = outd;
  std::vector<double> out(static_cast<std::size_t>(rows) * outd);
  Eigen::Map<RowMat> y(out.data(), rows, eo);
  y.noalias() = Eigen::Map<const RowMat>(x.data().data(), rows, ei) *
                Eigen::Map<const RowMat>(weight.data().data(), ei, eo);
  if (bias.defined()) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), eo);
  }
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result(std::move(shape), std::move(out), std::move(parents), [rows, ei, eo](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Eigen::Map<const RowMat> g(self.grad.data(), rows, eo);
    if (px.requires_grad) {
      Eigen::Map<RowMat>(px.grad_buffer().data(), rows, ei).noalias() +=
          g * Eigen::Map<const RowMat>(pw.value.data(), ei, eo).transpose();
    }
    if (pw.requires_grad) {
      Eigen::Map<RowMat>(pw.grad_buffer().data(), ei, eo).noalias() +=
          Eigen::Map<const RowMat>(px.value.data(), rows, ei).transpose() * g;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto gb = self.parents[2]->grad_buffer();
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < eo; ++c) gb[static_cast<std::size_t>(c)] += g(r, c);
    }
  });
}

// ---------------------------------------------------------------------------
// layout

Tensor reshape(const Tensor& a, Shape shape) {
  if (memno::ad::numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
  const std::size_t r = a.rank();
  if (order.size() != r) throw ShapeError("permute: order length does not match " + shape_str(a.shape()));
  std::vector<bool> used(r, false);
  Shape shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (order[i] >= r || used[order[i]]) throw ShapeError("permute: invalid axis order");
    used[order[i]] = true;
    shape[i] = a.dim(order[i]);
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * a.dim(i);
  // Source offset for each output element.
  const std::size_t n = a.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[order[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[src[i]];
  return make_result(std::move(shape), std::move(out), {a}, [src = std::move(src)](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
  });
}

Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (start + length > s.n) {
    throw ShapeError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") exceeds axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = length;
  std::vector<double> out(s.outer * length * s.inner);
  const auto x = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data() + (o * s.n + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  }
  return make_result(std::move(shape), std::move(out), {a}, [s, start, length](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = self.grad.data() + o * length * s.inner;
      double* dst = g.data() + (o * s.n + start) * s.inner;
      for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  split_axis(ref, axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch " + shape_str(p.shape()));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.dim(i) != ref[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()));
      }
    }
    total += p.dim(axis);
  }
  Shape shape = ref;
  shape[axis] = total;
  const AxisSplit s = split_axis(shape, axis);
  std::vector<double> out(memno::ad::numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.data().data() + o * len * s.inner, len * s.inner,
                  out.data() + (o * total + offset) * s.inner);
    }
    offsets.push_back(offset);
    offset += len;
  }
  return make_result(std::move(shape), std::move(out), parts, [s, total, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const std::size_t plen = p.value.size() / (s.outer * s.inner);
      auto g = p.grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = self.grad.data() + (o * total + offsets[k]) * s.inner;
        double* dst = g.data() + o * plen * s.inner;
        for (std::size_t i = 0; i < plen * s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor expand_leading(const Tensor& a, const Shape& lead) {
  const std::size_t reps = memno::ad::numel(lead);
  Shape shape = lead;
  shape.insert(shape.end(), a.shape().begin(), a.shape().end());
  const std::size_t n = a.numel();
  std::vector<double> out(reps * n);
  for (std::size_t r = 0; r < reps; ++r) std::copy_n(a.data().data(), n, out.data() + r * n);
  return make_result(std::move(shape), std::move(out), {a}, [reps, n](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < reps; ++r) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[r * n + i];
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto x = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.n; ++i) {
      const double* row = x.data() + (o * s.n + i) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t j = 0; j < s.inner; ++j) dst[j] += row[j];
    }
  }
  return make_result(std::move(shape), std::move(out), {a}, [s](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.n; ++i) {
        double* dst = g.data() + (o * s.n + i) * s.inner;
        const double* src = self.grad.data() + o * s.inner;
        for (std::size_t j = 0; j < s.inner; ++j) dst[j] += src[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// complex

ComplexTensor to_complex(const Tensor& re) {
  std::vector<double> out(2 * re.numel(), 0.0);
  for (std::size_t i = 0; i < re.numel(); ++i) out[2 * i] = re.data()[i];
  return ComplexTensor(make_result(complex_raw_shape(re.shape()), std::move(out), {re}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[2 * i];
  }));
}

ComplexTensor make_complex(const Tensor& re, const Tensor& im) {
  require_same(re, im, "make_complex");
  std::vector<double> out(2 * re.numel());
  for (std::size_t i = 0; i < re.numel(); ++i) {
    out[2 * i] = re.data()[i];
    out[2 * i + 1] = im.data()[i];
  }
  return ComplexTensor(make_result(complex_raw_shape(re.shape()), std::move(out), {re, im}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!self.parents[k]->requires_grad) continue;
      auto g = self.parents[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[2 * i + k];
    }
  }));
}

namespace {

Tensor component(const ComplexTensor& z, std::size_t which) {
  const Tensor& raw = z.raw();
  std::vector<double> out(z.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = raw.data()[2 * i + which];
  return make_result(z.shape(), std::move(out), {raw}, [which](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[2 * i + which] += self.grad[i];
  });
}

}  // namespace

Tensor real(const ComplexTensor& z) { return component(z, 0); }
Tensor imag(const ComplexTensor& z) { return component(z, 1); }

ComplexTensor cadd(const ComplexTensor& a, const ComplexTensor& b) {
  return ComplexTensor(add(a.raw(), b.raw()));
}

ComplexTensor cmul(const ComplexTensor& a, const ComplexTensor& b) {
  require_same(a.raw(), b.raw(), "cmul");
  const std::size_t n = a.numel();
  std::vector<double> out(2 * n);
  const cplx* x = as_complex(a.raw().node().value);
  const cplx* y = as_complex(b.raw().node().value);
  cplx* o = as_complex(out);
  for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
  return ComplexTensor(make_result(a.raw().shape(), std::move(out), {a.raw(), b.raw()}, [n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const cplx* g = as_complex(self.grad);
    if (pa.requires_grad) {
      auto* ga = reinterpret_cast<cplx*>(pa.grad_buffer().data());
      const cplx* y = as_complex(pb.value);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * std::conj(y[i]);
    }
    if (pb.requires_grad) {
      auto* gb = reinterpret_cast<cplx*>(pb.grad_buffer().data());
      const cplx* x = as_complex(pa.value);
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * std::conj(x[i]);
    }
  }));
}

ComplexTensor cnarrow(const ComplexTensor& z, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= z.shape().size()) throw ShapeError("cnarrow: axis out of range");
  return ComplexTensor(narrow(z.raw(), axis, start, length));
}

ComplexTensor creshape(const ComplexTensor& z, Shape shape) {
  return ComplexTensor(reshape(z.raw(), complex_raw_shape(std::move(shape))));
}

namespace {

// Unnormalised transform along `axis` of a complex buffer.
void axis_transform(cplx* data, const AxisSplit& s, bool inverse) {
  fft::transform_axis(data, s.outer, s.n, s.inner, inverse);
}

ComplexTensor complex_fft(const ComplexTensor& z, std::size_t axis, bool inverse) {
  const Shape shape = z.shape();
  const AxisSplit s = split_axis(shape, axis);
  if (s.n == 0) throw ShapeError("fft along zero-length axis of " + shape_str(shape));
  std::vector<double> out(z.raw().data().begin(), z.raw().data().end());
  axis_transform(as_complex(out), s, inverse);
  const double scale_out = inverse ? 1.0 / static_cast<double>(s.n) : 1.0;
  if (inverse) {
    for (auto& v : out) v *= scale_out;
  }
  return ComplexTensor(make_result(z.raw().shape(), std::move(out), {z.raw()}, [s, inverse](Node& self) {
    // Adjoint of F is the unnormalised inverse; adjoint of F^{-1} is F/n.
    std::vector<double> g = self.grad;
    axis_transform(as_complex(g), s, !inverse);
    const double sc = inverse ? 1.0 / static_cast<double>(s.n) : 1.0;
    auto pg = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += sc * g[i];
  }));
}

}  // namespace

ComplexTensor fft(const Tensor& x, std::size_t axis) { return complex_fft(to_complex(x), axis, false); }
ComplexTensor fft(const ComplexTensor& z, std::size_t axis) { return complex_fft(z, axis, false); }
ComplexTensor ifft(const ComplexTensor& z, std::size_t axis) { return complex_fft(z, axis, true); }

ComplexTensor rfft(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  if (s.n == 0) throw ShapeError("rfft along zero-length axis of " + shape_str(x.shape()));
  const std::size_t m = s.n / 2 + 1;
  std::vector<cplx> work(x.data().begin(), x.data().end());
  axis_transform(work.data(), s, false);
  Shape shape = x.shape();
  shape[axis] = m;
  std::vector<double> out(2 * s.outer * m * s.inner);
  cplx* o = as_complex(out);
  for (std::size_t a = 0; a < s.outer; ++a) {
    std::copy_n(work.data() + a * s.n * s.inner, m * s.inner, o + a * m * s.inner);
  }
  return ComplexTensor(make_result(complex_raw_shape(std::move(shape)), std::move(out), {x},
                                   [s, m](Node& self) {
    std::vector<cplx> g(s.outer * s.n * s.inner, cplx{0.0, 0.0});
    const cplx* src = as_complex(self.grad);
    for (std::size_t a = 0; a < s.outer; ++a) {
      std::copy_n(src + a * m * s.inner, m * s.inner, g.data() + a * s.n * s.inner);
    }
    axis_transform(g.data(), s, true);
    auto pg = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[i].real();
  }));
}

Tensor irfft(const ComplexTensor& z, std::size_t axis, std::size_t n) {
  const Shape zshape = z.shape();
  const AxisSplit zs = split_axis(zshape, axis);
  const std::size_t m = zs.n;
  if (n == 0) throw ShapeError("irfft to zero length");
  if (m > n / 2 + 1) {
    throw ShapeError("irfft: " + std::to_string(m) + " modes exceed n/2+1 for n=" + std::to_string(n));
  }
  const AxisSplit s{zs.outer, n, zs.inner};
  const bool even = (n % 2 == 0);
  std::vector<cplx> full(s.outer * n * s.inner, cplx{0.0, 0.0});
  const cplx* src = as_complex(z.raw().node().value);
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t j = 0; j < s.inner; ++j) {
        cplx c = src[(a * m + k) * s.inner + j];
        const bool self_conj = (k == 0) || (even && k == n / 2);
        if (self_conj) c = {c.real(), 0.0};
        full[(a * n + k) * s.inner + j] = c;
        if (!self_conj) full[(a * n + (n - k)) * s.inner + j] = std::conj(c);
      }
    }
  }
  axis_transform(full.data(), s, true);
  Shape shape = zshape;
  shape[axis] = n;
  std::vector<double> out(full.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = full[i].real() * inv_n;
  return make_result(std::move(shape), std::move(out), {z.raw()}, [s, m, even](Node& self) {
    const std::size_t len = s.n;
    std::vector<cplx> g(self.grad.begin(), self.grad.end());
    axis_transform(g.data(), s, false);
    auto* pg = reinterpret_cast<cplx*>(self.parents[0]->grad_buffer().data());
    const double inv_n = 1.0 / static_cast<double>(len);
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t k = 0; k < m; ++k) {
        const bool self_conj = (k == 0) || (even && k == len / 2);
        for (std::size_t j = 0; j < s.inner; ++j) {
          const cplx v = g[(a * len + k) * s.inner + j];
          cplx& dst = pg[(a * m + k) * s.inner + j];
          if (self_conj) {
            dst += cplx{v.real() * inv_n, 0.0};
          } else {
            dst += 2.0 * inv_n * v;
          }
        }
      }
    }
  });
}

ComplexTensor spectral_linear(const ComplexTensor& x, const ComplexTensor& w) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (xs.size() != 4 || ws.size() != 3 || xs[1] != ws[0] || xs[3] != ws[1]) {
    throw ShapeError("spectral_linear: expected x[N,K,M,I] and w[K,I,O], got " + shape_str(xs) +
                     " and " + shape_str(ws));
  }
  const std::size_t N = xs[0], K = xs[1], M = xs[2], I = xs[3], O = ws[2];
  const auto rows = static_cast<Eigen::Index>(N * M);
  std::vector<double> out(2 * N * K * M * O);
  const cplx* xv = as_complex(x.raw().node().value);
  const cplx* wv = as_complex(w.raw().node().value);
  cplx* ov = as_complex(out);
  CRowMat xk(rows, static_cast<Eigen::Index>(I));
  CRowMat yk;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(xv + ((n * K + k) * M) * I, M * I, xk.data() + n * M * I);
    }
    yk.noalias() = xk * Eigen::Map<const CRowMat>(wv + k * I * O, static_cast<Eigen::Index>(I),
                                                  static_cast<Eigen::Index>(O));
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(yk.data() + n * M * O, M * O, ov + ((n * K + k) * M) * O);
    }
  }
  return ComplexTensor(make_result(complex_raw_shape({N, K, M, O}), std::move(out), {x.raw(), w.raw()},
                                   [N, K, M, I, O, rows](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    const cplx* g = as_complex(self.grad);
    const cplx* xv = as_complex(px.value);
    const cplx* wv = as_complex(pw.value);
    cplx* gx = px.requires_grad ? reinterpret_cast<cplx*>(px.grad_buffer().data()) : nullptr;
    cplx* gw = pw.requires_grad ? reinterpret_cast<cplx*>(pw.grad_buffer().data()) : nullptr;
    const auto ei = static_cast<Eigen::Index>(I);
    const auto eo = static_cast<Eigen::Index>(O);
    CRowMat gk(rows, eo);
    CRowMat xk(rows, ei);
    CRowMat tmp;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t n = 0; n < N; ++n) {
        std::copy_n(g + ((n * K + k) * M) * O, M * O, gk.data() + n * M * O);
      }
      if (gx != nullptr) {
        tmp.noalias() = gk * Eigen::Map<const CRowMat>(wv + k * I * O, ei, eo).adjoint();
        for (std::size_t n = 0; n < N; ++n) {
          cplx* dst = gx + ((n * K + k) * M) * I;
          const cplx* src = tmp.data() + n * M * I;
          for (std::size_t i = 0; i < M * I; ++i) dst[i] += src[i];
        }
      }
      if (gw != nullptr) {
        for (std::size_t n = 0; n < N; ++n) {
          std::copy_n(xv + ((n * K + k) * M) * I, M * I, xk.data() + n * M * I);
        }
        Eigen::Map<CRowMat>(gw + k * I * O, ei, eo).noalias() += xk.adjoint() * gk;
      }
    }
  }));
}

// ---------------------------------------------------------------------------
// gradient check

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.detach(true);
  Tensor y = f(leaf);
  if (y.numel() != 1) throw ShapeError("grad_check: f must be scalar-valued, got " + shape_str(y.shape()));
  if (!std::isfinite(y.item())) throw NonFiniteError("grad_check: f(x) is not finite", 0);
  std::vector<double> analytic(leaf.numel(), 0.0);
  if (y.requires_grad()) {
    y.backward();
    if (leaf.has_grad()) analytic.assign(leaf.grad().begin(), leaf.grad().end());
  }
  NoGradGuard guard;
  GradCheckResult result;
  for (std::size_t i = 0; i < leaf.numel(); ++i) {
    Tensor xp = x.detach();
    Tensor xm = x.detach();
    xp.mutable_data()[i] += h;
    xm.mutable_data()[i] -= h;
    const double fp = f(xp).item();
    const double fm = f(xm).item();
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NonFiniteError("grad_check: non-finite value at coordinate " + std::to_string(i), i);
    }
    const double central = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace memno::ad

#include "memno/neural.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace memno::nn {

using ad::ComplexTensor;
using ad::Node;
using ad::Shape;
using ad::Tensor;
using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// config

void ModelConfig::validate() const {
  if (layers.empty()) throw std::invalid_argument("layer config is empty");
  for (char ch : layers) {
    if (ch != 'S' && ch != 'T') throw std::invalid_argument("layer config '" + layers + "' must use only S and T");
  }
  if (count('S') == 0) throw std::invalid_argument("layer config '" + layers + "' has no S layer");
  if (hidden < 1 || expanded < 1 || n_ssm < 1) throw std::invalid_argument("widths and state size must be >= 1");
  if (dims != 1 && dims != 2) throw std::invalid_argument("dims must be 1 or 2");
  if (!(dt_min > 0.0) || !(dt_max >= dt_min)) throw std::invalid_argument("need 0 < dt_min <= dt_max");
}

std::size_t ModelConfig::modes(std::size_t f) const {
  const std::size_t cap = f / 2;
  const std::size_t k = k_max == 0 ? cap : k_max;
  if (k < 1 || k > cap) {
    throw std::invalid_argument("k_max " + std::to_string(k) + " must lie in [1, " + std::to_string(cap) + "]");
  }
  return k;
}

std::size_t ModelConfig::count(char kind) const {
  return static_cast<std::size_t>(std::count(layers.begin(), layers.end(), kind));
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "layers=" << layers << "\nhidden=" << hidden << "\nexpanded=" << expanded << "\nk_max=" << k_max
     << "\nn_ssm=" << n_ssm << "\ndims=" << dims << "\nwindow=" << window << "\nreset=" << reset
     << "\nmulti_input=" << multi_input << "\ndt_min=" << dt_min << "\ndt_max=" << dt_max << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    auto num = [&](std::size_t& dst) {
      std::size_t used = 0;
      dst = std::stoul(val, &used);
      if (used != val.size()) throw std::invalid_argument(val);
    };
    auto real = [&](double& dst) {
      std::size_t used = 0;
      dst = std::stod(val, &used);
      if (used != val.size()) throw std::invalid_argument(val);
    };
    if (key == "layers") {
      c.layers = val;
      continue;
    }
    try {
      if (key == "hidden") num(c.hidden);
      else if (key == "expanded") num(c.expanded);
      else if (key == "k_max") num(c.k_max);
      else if (key == "n_ssm") num(c.n_ssm);
      else if (key == "dims") num(c.dims);
      else if (key == "window") num(c.window);
      else if (key == "reset") num(c.reset);
      else if (key == "multi_input") num(c.multi_input);
      else if (key == "dt_min") real(c.dt_min);
      else if (key == "dt_max") real(c.dt_max);
      else throw std::out_of_range("unknown");
    } catch (const std::out_of_range&) {
      throw std::invalid_argument("unknown or out-of-range config key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("bad value for config key '" + key + "': " + val);
    }
  }
  c.validate();
  return c;
}

std::size_t Windowing::start(std::size_t t) const {
  std::size_t lo = 0;
  if (window > 0) lo = sliding ? (t + 1 > window ? t + 1 - window : 0) : (t / window) * window;
  if (reset > 0) lo = std::max(lo, (t / reset) * reset);
  return lo;
}

// ---------------------------------------------------------------------------
// positional encoding

Tensor positional_encoding(std::size_t f, double length) {
  if (f == 0 || !(length > 0.0)) throw std::invalid_argument("positional_encoding: need f >= 1 and L > 0");
  std::vector<double> e(f);
  for (std::size_t i = 0; i < f; ++i) e[i] = static_cast<double>(i) / length;
  return Tensor::from({f}, std::move(e));
}

Tensor positional_encoding_2d(std::size_t f, double length_x, double length_y) {
  if (f == 0 || !(length_x > 0.0) || !(length_y > 0.0)) {
    throw std::invalid_argument("positional_encoding_2d: need f >= 1 and positive lengths");
  }
  std::vector<double> e(f * f * 2);
  for (std::size_t i = 0; i < f; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      e[(i * f + j) * 2] = static_cast<double>(i) / length_x;
      e[(i * f + j) * 2 + 1] = static_cast<double>(j) / length_y;
    }
  }
  return Tensor::from({f, f, 2}, std::move(e));
}

// ---------------------------------------------------------------------------
// FFNO layer

Tensor ffno_layer(const Tensor& v, const FfnoParams& p) {
  Tensor kv;
  if (v.rank() == 3) {
    if (p.r.size() != 1) throw ad::ShapeError("ffno_layer: 1D input needs one spectral weight");
    const std::size_t n = v.dim(0), f = v.dim(1), h = v.dim(2);
    const std::size_t k = p.r[0].shape().at(0);
    if (k > f / 2 || f < 2) throw ad::ShapeError("ffno_layer: k_max exceeds floor(f/2)");
    auto z = ad::cnarrow(ad::rfft(v, 1), 1, 0, k);
    auto y = ad::spectral_linear(ad::creshape(z, {n, k, 1, h}), p.r[0]);
    kv = ad::irfft(ad::creshape(y, {n, k, h}), 1, f);
  } else if (v.rank() == 4) {
    if (p.r.size() != 2) throw ad::ShapeError("ffno_layer: 2D input needs two spectral weights");
    const std::size_t n = v.dim(0), f1 = v.dim(1), f2 = v.dim(2), h = v.dim(3);
    const std::size_t k1 = p.r[0].shape().at(0);
    const std::size_t k2 = p.r[1].shape().at(0);
    if (k1 > f1 / 2 || k2 > f2 / 2) throw ad::ShapeError("ffno_layer: k_max exceeds floor(f/2)");
    auto z1 = ad::cnarrow(ad::rfft(v, 1), 1, 0, k1);  // [n, k1, f2, h]
    auto y1 = ad::spectral_linear(z1, p.r[0]);
    auto part1 = ad::irfft(y1, 1, f1);
    auto z2 = ad::cnarrow(ad::rfft(v, 2), 2, 0, k2);  // [n, f1, k2, h]
    auto y2 = ad::spectral_linear(ad::creshape(z2, {n * f1, k2, 1, h}), p.r[1]);
    auto part2 = ad::irfft(ad::creshape(y2, {n, f1, k2, h}), 2, f2);
    kv = part1 + part2;
  } else {
    throw ad::ShapeError("ffno_layer: expected [N, f, h] or [N, f, f, h], got " + ad::shape_str(v.shape()));
  }
  auto hidden = ad::gelu(ad::linear(kv, p.w1, p.b1));
  return v + ad::linear(hidden, p.w2, p.b2);
}

std::size_t ffno_param_count(std::size_t h, std::size_t h_expanded, std::size_t k_max, std::size_t dims) {
  return dims * 2 * k_max * h * h + 2 * h * h_expanded + h_expanded + h;
}

// ---------------------------------------------------------------------------
// S4D kernel

namespace {

// e^x - 1 for complex x without cancellation near 0.
cplx cexpm1(cplx x) {
  const double a = x.real();
  const double b = x.imag();
  const double s = std::sin(0.5 * b);
  return {std::expm1(a) * std::cos(b) - 2.0 * s * s, std::exp(a) * std::sin(b)};
}

// x e^x - (e^x - 1), accurate for small |x|.
cplx xexp_minus_expm1(cplx x) {
  if (std::abs(x) < 0.1) {
    cplx term = x * x;  // x^k
    cplx sum = 0.5 * term;
    double fact = 2.0;
    for (int k = 3; k < 14; ++k) {
      term *= x;
      fact *= k;
      sum += term * (static_cast<double>(k - 1) / fact);
    }
    return sum;
  }
  return x * std::exp(x) - cexpm1(x);
}

struct Discrete {
  cplx a;     // continuous A
  cplx abar;  // exp(dt A)
  cplx bbar;  // (abar - 1)/A
};

Discrete discretize(double dt, double log_neg_re, double a_im) {
  Discrete out;
  out.a = cplx(-std::exp(log_neg_re), a_im);
  const cplx x = dt * out.a;
  out.abar = std::exp(x);
  out.bbar = cexpm1(x) / out.a;
  if (!(std::abs(out.abar) < 1.0)) throw InstabilityError("ssm_kernel: |Abar| >= 1");
  return out;
}

void check_ssm(const SsmParams& p) {
  const std::size_t h = p.log_dt.numel();
  if (p.log_dt.rank() != 1 || p.log_neg_re.rank() != 2 || p.a_im.shape() != p.log_neg_re.shape() ||
      p.log_neg_re.dim(0) != h || p.c.rank() != 3 || p.c.dim(0) != h || p.c.dim(1) != p.a_im.dim(1) ||
      p.c.dim(2) != 2 || p.d.numel() != h) {
    throw ad::ShapeError("SsmParams: inconsistent shapes");
  }
}

}  // namespace

Tensor ssm_kernel(const SsmParams& p, std::size_t length) {
  check_ssm(p);
  if (length < 1) throw std::invalid_argument("ssm_kernel: length must be >= 1");
  const std::size_t h = p.channels();
  const std::size_t ns = p.states();
  std::vector<double> out(h * length, 0.0);
  for (std::size_t c = 0; c < h; ++c) {
    const double dt = std::exp(p.log_dt.at(c));
    for (std::size_t n = 0; n < ns; ++n) {
      const auto dz = discretize(dt, p.log_neg_re.at(c * ns + n), p.a_im.at(c * ns + n));
      const cplx cc(p.c.at((c * ns + n) * 2), p.c.at((c * ns + n) * 2 + 1));
      cplx w = cc * dz.bbar;
      for (std::size_t j = 0; j < length; ++j) {
        out[c * length + j] += w.real();
        w *= dz.abar;
      }
    }
  }
  return ad::make_result({h, length}, std::move(out), {p.log_dt, p.log_neg_re, p.a_im, p.c},
                         [h, ns, length](Node& self) {
    Node& pdt = *self.parents[0];
    Node& pre = *self.parents[1];
    Node& pim = *self.parents[2];
    Node& pc = *self.parents[3];
    std::span<double> g_dt = pdt.requires_grad ? pdt.grad_buffer() : std::span<double>{};
    std::span<double> g_re = pre.requires_grad ? pre.grad_buffer() : std::span<double>{};
    std::span<double> g_im = pim.requires_grad ? pim.grad_buffer() : std::span<double>{};
    std::span<double> g_c = pc.requires_grad ? pc.grad_buffer() : std::span<double>{};
    for (std::size_t c = 0; c < h; ++c) {
      const double dt = std::exp(pdt.value[c]);
      const double* g = self.grad.data() + c * length;
      double s_dt_total = 0.0;
      for (std::size_t n = 0; n < ns; ++n) {
        const std::size_t idx = c * ns + n;
        const auto dz = discretize(dt, pre.value[idx], pim.value[idx]);
        const cplx cc(pc.value[2 * idx], pc.value[2 * idx + 1]);
        const cplx dbbar_da = xexp_minus_expm1(dt * dz.a) / (dz.a * dz.a);
        cplx s_c{}, s_a{}, s_t{};
        cplx pj = 1.0;
        for (std::size_t j = 0; j < length; ++j) {
          const double jj = static_cast<double>(j);
          s_c += g[j] * std::conj(dz.bbar * pj);
          s_a += g[j] * (dbbar_da + dz.bbar * jj * dt) * pj;
          s_t += g[j] * (dz.abar + dz.bbar * jj * dz.a) * pj;
          pj *= dz.abar;
        }
        s_a *= cc;
        s_t *= cc;
        if (!g_c.empty()) {
          g_c[2 * idx] += s_c.real();
          g_c[2 * idx + 1] += s_c.imag();
        }
        if (!g_re.empty()) g_re[idx] += s_a.real() * dz.a.real();
        if (!g_im.empty()) g_im[idx] -= s_a.imag();
        s_dt_total += s_t.real();
      }
      if (!g_dt.empty()) g_dt[c] += dt * s_dt_total;
    }
  });
}

std::vector<double> ssm_recurrence(const SsmParams& p, std::size_t channel, const std::vector<double>& u) {
  check_ssm(p);
  const std::size_t ns = p.states();
  const double dt = std::exp(p.log_dt.at(channel));
  std::vector<Discrete> dz(ns);
  std::vector<cplx> cc(ns), x(ns, cplx{});
  for (std::size_t n = 0; n < ns; ++n) {
    const std::size_t idx = channel * ns + n;
    dz[n] = discretize(dt, p.log_neg_re.at(idx), p.a_im.at(idx));
    cc[n] = cplx(p.c.at(2 * idx), p.c.at(2 * idx + 1));
  }
  std::vector<double> y(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    double acc = p.d.at(channel) * u[k];
    for (std::size_t n = 0; n < ns; ++n) {
      x[n] = dz[n].abar * x[n] + dz[n].bbar * u[k];
      acc += (cc[n] * x[n]).real();
    }
    y[k] = acc;
  }
  return y;
}

// ---------------------------------------------------------------------------
// causal convolution and memory layer

Tensor causal_conv(const Tensor& u, const Tensor& kernel, const Tensor& d, const Windowing& w) {
  if (u.rank() != 4) throw ad::ShapeError("causal_conv: expected u[B,T,P,C], got " + ad::shape_str(u.shape()));
  const std::size_t nb = u.dim(0), nt = u.dim(1), np = u.dim(2), nc = u.dim(3);
  if (kernel.rank() != 2 || kernel.dim(0) != nc || kernel.dim(1) < nt || d.numel() != nc) {
    throw ad::ShapeError("causal_conv: kernel " + ad::shape_str(kernel.shape()) + " / D " + ad::shape_str(d.shape()) +
                         " do not fit " + ad::shape_str(u.shape()));
  }
  const std::size_t len = kernel.dim(1);
  // Column-major copy: kt[j*C + c] = K[c, j].
  std::vector<double> kt(len * nc);
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t j = 0; j < len; ++j) kt[j * nc + c] = kernel.at(c * len + j);

  const std::size_t row = np * nc;
  const double* uv = u.data().data();
  const double* dv = d.data().data();
  std::vector<double> out(u.numel());
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t t = 0; t < nt; ++t) {
      double* y = out.data() + (b * nt + t) * row;
      const double* ut = uv + (b * nt + t) * row;
      for (std::size_t i = 0; i < row; ++i) y[i] = dv[i % nc] * ut[i];
      const std::size_t span = t - w.start(t);
      for (std::size_t j = 0; j <= span; ++j) {
        const double* us = uv + (b * nt + t - j) * row;
        const double* kj = kt.data() + j * nc;
        for (std::size_t p = 0; p < np; ++p) {
          double* yp = y + p * nc;
          const double* up = us + p * nc;
          for (std::size_t c = 0; c < nc; ++c) yp[c] += kj[c] * up[c];
        }
      }
    }
  }
  return ad::make_result(u.shape(), std::move(out), {u, kernel, d},
                         [nb, nt, np, nc, len, row, w, kt = std::move(kt)](Node& self) {
    Node& pu = *self.parents[0];
    Node& pk = *self.parents[1];
    Node& pd = *self.parents[2];
    const double* g = self.grad.data();
    const double* uv = pu.value.data();
    double* gu = pu.requires_grad ? pu.grad_buffer().data() : nullptr;
    std::vector<double> gkt(pk.requires_grad ? len * nc : 0, 0.0);
    double* gd = pd.requires_grad ? pd.grad_buffer().data() : nullptr;
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t t = 0; t < nt; ++t) {
        const double* gt = g + (b * nt + t) * row;
        if (gu != nullptr) {
          double* gut = gu + (b * nt + t) * row;
          for (std::size_t i = 0; i < row; ++i) gut[i] += pd.value[i % nc] * gt[i];
        }
        if (gd != nullptr) {
          const double* ut = uv + (b * nt + t) * row;
          for (std::size_t i = 0; i < row; ++i) gd[i % nc] += gt[i] * ut[i];
        }
        const std::size_t span = t - w.start(t);
        for (std::size_t j = 0; j <= span; ++j) {
          const std::size_t src = (b * nt + t - j) * row;
          const double* kj = kt.data() + j * nc;
          if (gu != nullptr) {
            double* gs = gu + src;
            for (std::size_t p = 0; p < np; ++p)
              for (std::size_t c = 0; c < nc; ++c) gs[p * nc + c] += kj[c] * gt[p * nc + c];
          }
          if (!gkt.empty()) {
            double* gk = gkt.data() + j * nc;
            const double* us = uv + src;
            for (std::size_t p = 0; p < np; ++p)
              for (std::size_t c = 0; c < nc; ++c) gk[c] += gt[p * nc + c] * us[p * nc + c];
          }
        }
      }
    }
    if (!gkt.empty()) {
      auto gk = pk.grad_buffer();
      for (std::size_t c = 0; c < nc; ++c)
        for (std::size_t j = 0; j < len; ++j) gk[c * len + j] += gkt[j * nc + c];
    }
  });
}

Tensor memory_layer(const Tensor& v, const SsmParams& p, const Windowing& w) {
  if (v.rank() != 4 || v.dim(3) != p.channels()) {
    throw ad::ShapeError("memory_layer: expected [B,T,P," + std::to_string(p.channels()) + "], got " +
                         ad::shape_str(v.shape()));
  }
  const Tensor k = ssm_kernel(p, v.dim(1));
  return v + causal_conv(v, k, p.d, w);
}

// ---------------------------------------------------------------------------
// MemNO

namespace {

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

MemNO::MemNO(ModelConfig config, std::size_t resolution, double length, std::uint64_t seed)
    : config_(std::move(config)), resolution_(resolution), length_(length) {
  config_.validate();
  if (resolution < 2) throw std::invalid_argument("MemNO: resolution must be >= 2");
  modes_ = config_.modes(resolution);
  positional_ = config_.dims == 1 ? ad::reshape(positional_encoding(resolution, length), {resolution, 1})
                                  : positional_encoding_2d(resolution, length, length);

  std::mt19937_64 rng(seed);
  const std::size_t h = config_.hidden;
  const std::size_t he = config_.expanded;
  const std::size_t cin = config_.input_channels();
  enc_w_ = uniform({cin, h}, 1.0 / std::sqrt(static_cast<double>(cin)), rng);
  enc_b_ = uniform({h}, 1.0 / std::sqrt(static_cast<double>(cin)), rng);
  for (char kind : config_.layers) {
    Layer layer;
    layer.kind = kind;
    if (kind == 'S') {
      const double rs = 1.0 / static_cast<double>(h * modes_);
      for (std::size_t a = 0; a < config_.dims; ++a) {
        layer.ffno.r.emplace_back(uniform({modes_, h, h, 2}, rs, rng));
      }
      layer.ffno.w1 = uniform({h, he}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
      layer.ffno.b1 = uniform({he}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
      layer.ffno.w2 = uniform({he, h}, 1.0 / std::sqrt(static_cast<double>(he)), rng);
      layer.ffno.b2 = uniform({h}, 1.0 / std::sqrt(static_cast<double>(he)), rng);
    } else {
      const std::size_t ns = config_.n_ssm;
      std::uniform_real_distribution<double> ldt(std::log(config_.dt_min), std::log(config_.dt_max));
      std::normal_distribution<double> nd(0.0, std::sqrt(0.5));
      std::vector<double> log_dt(h), re(h * ns, std::log(0.5)), im(h * ns), c(h * ns * 2);
      for (auto& x : log_dt) x = ldt(rng);
      for (std::size_t ch = 0; ch < h; ++ch)
        for (std::size_t n = 0; n < ns; ++n) im[ch * ns + n] = std::numbers::pi * static_cast<double>(n);
      for (auto& x : c) x = nd(rng);
      layer.ssm.log_dt = Tensor::from({h}, std::move(log_dt), true);
      layer.ssm.log_neg_re = Tensor::from({h, ns}, std::move(re), true);
      layer.ssm.a_im = Tensor::from({h, ns}, std::move(im), true);
      layer.ssm.c = Tensor::from({h, ns, 2}, std::move(c), true);
      layer.ssm.d = Tensor::zeros({h}, true);
    }
    layers_.push_back(std::move(layer));
  }
  dec_w_ = uniform({h, 1}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  dec_b_ = uniform({1}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
}

std::vector<Tensor> MemNO::parameters() const {
  std::vector<Tensor> out{enc_w_, enc_b_};
  for (const auto& l : layers_) {
    if (l.kind == 'S') {
      for (const auto& r : l.ffno.r) out.push_back(r.raw());
      out.insert(out.end(), {l.ffno.w1, l.ffno.b1, l.ffno.w2, l.ffno.b2});
    } else {
      out.insert(out.end(), {l.ssm.log_dt, l.ssm.log_neg_re, l.ssm.a_im, l.ssm.c, l.ssm.d});
    }
  }
  out.push_back(dec_w_);
  out.push_back(dec_b_);
  return out;
}

std::vector<std::string> MemNO::parameter_names() const {
  std::vector<std::string> out{"encoder.weight", "encoder.bias"};
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string pre = "layer" + std::to_string(i) + ".";
    if (layers_[i].kind == 'S') {
      for (std::size_t a = 0; a < layers_[i].ffno.r.size(); ++a) out.push_back(pre + "r" + std::to_string(a));
      for (const char* n : {"w1", "b1", "w2", "b2"}) out.push_back(pre + n);
    } else {
      for (const char* n : {"log_dt", "log_neg_re", "a_im", "c", "d"}) out.push_back(pre + n);
    }
  }
  out.push_back("decoder.weight");
  out.push_back("decoder.bias");
  return out;
}

std::size_t MemNO::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

std::vector<double> MemNO::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& p : parameters()) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

void MemNO::set_parameters(const std::vector<double>& flat) {
  if (flat.size() != parameter_count()) {
    throw std::invalid_argument("set_parameters: expected " + std::to_string(parameter_count()) + " values, got " +
                                std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (auto p : parameters()) {
    auto dst = p.mutable_data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
    off += dst.size();
  }
}

FfnoParams& MemNO::ffno(std::size_t layer) {
  if (layers_.at(layer).kind != 'S') throw std::invalid_argument("layer is not an S layer");
  return layers_[layer].ffno;
}

SsmParams& MemNO::ssm(std::size_t layer) {
  if (layers_.at(layer).kind != 'T') throw std::invalid_argument("layer is not a T layer");
  return layers_[layer].ssm;
}

std::size_t MemNO::spatial_size() const {
  return config_.dims == 1 ? resolution_ : resolution_ * resolution_;
}

Tensor MemNO::encode(const Tensor& inputs) const {
  const std::size_t d = config_.dims;
  const std::size_t want_rank = 2 + d + (config_.multi_input > 0 ? 1 : 0);
  bool ok = inputs.rank() == want_rank;
  for (std::size_t a = 0; ok && a < d; ++a) ok = inputs.dim(2 + a) == resolution_;
  if (ok && config_.multi_input > 0) ok = inputs.shape().back() == config_.multi_input;
  if (!ok) {
    throw ad::ShapeError("MemNO: input " + ad::shape_str(inputs.shape()) + " does not match resolution " +
                         std::to_string(resolution_) + (config_.multi_input > 0 ? " with stacked history" : ""));
  }
  Tensor x = inputs;
  if (config_.multi_input == 0) {
    Shape s = inputs.shape();
    s.push_back(1);
    x = ad::reshape(inputs, s);
  }
  const Tensor pos = ad::expand_leading(positional_, {inputs.dim(0), inputs.dim(1)});
  return ad::linear(ad::concat({x, pos}, x.rank() - 1), enc_w_, enc_b_);
}

Tensor MemNO::decode(const Tensor& hidden) const {
  Tensor y = ad::linear(hidden, dec_w_, dec_b_);
  Shape s = hidden.shape();
  s.pop_back();
  return ad::reshape(y, s);
}

Tensor MemNO::forward(const Tensor& inputs) const {
  return forward(inputs, Windowing{config_.window, config_.reset, false});
}

Tensor MemNO::forward(const Tensor& inputs, const Windowing& w) const {
  Tensor v = encode(inputs);
  const std::size_t nb = inputs.dim(0);
  const std::size_t nt = inputs.dim(1);
  const std::size_t h = config_.hidden;
  const Shape full = v.shape();
  Shape flat_time{nb * nt};
  for (std::size_t a = 0; a < config_.dims; ++a) flat_time.push_back(resolution_);
  flat_time.push_back(h);
  for (const auto& layer : layers_) {
    if (layer.kind == 'S') {
      v = ad::reshape(ffno_layer(ad::reshape(v, flat_time), layer.ffno), full);
    } else {
      v = ad::reshape(memory_layer(ad::reshape(v, {nb, nt, spatial_size(), h}), layer.ssm, w), full);
    }
  }
  return decode(v);
}

// ---------------------------------------------------------------------------
// Rollout

Rollout::Rollout(const MemNO& model, std::size_t batch, std::size_t max_steps)
    : Rollout(model, batch, max_steps, Windowing{model.config().window, model.config().reset, false}) {}

Rollout::Rollout(const MemNO& model, std::size_t batch, std::size_t max_steps, Windowing w)
    : model_(model), batch_(batch), max_steps_(max_steps), window_(w) {
  if (batch == 0 || max_steps == 0) throw std::invalid_argument("Rollout: batch and max_steps must be >= 1");
  ad::NoGradGuard guard;
  kernels_.resize(model.layers_.size());
  history_.resize(model.layers_.size());
  for (std::size_t l = 0; l < model.layers_.size(); ++l) {
    if (model.layers_[l].kind != 'T') continue;
    const Tensor k = ssm_kernel(model.layers_[l].ssm, max_steps);
    kernels_[l].assign(k.data().begin(), k.data().end());
  }
}

Tensor Rollout::step(const Tensor& input) {
  if (t_ >= max_steps_) throw std::out_of_range("Rollout: exceeded max_steps");
  if (input.rank() == 0 || input.dim(0) != batch_) throw ad::ShapeError("Rollout: batch size mismatch");
  ad::NoGradGuard guard;
  const auto& cfg = model_.config();
  Shape s = input.shape();
  s.insert(s.begin() + 1, 1);
  Tensor v = model_.encode(ad::reshape(input, s));
  const Shape full = v.shape();
  Shape flat = full;
  flat.erase(flat.begin() + 1);
  const std::size_t h = cfg.hidden;
  const std::size_t row = batch_ * model_.spatial_size() * h;
  for (std::size_t l = 0; l < model_.layers_.size(); ++l) {
    const auto& layer = model_.layers_[l];
    if (layer.kind == 'S') {
      v = ad::reshape(ffno_layer(ad::reshape(v, flat), layer.ffno), full);
      continue;
    }
    auto& hist = history_[l];
    hist.emplace_back(v.data().begin(), v.data().end());
    const std::vector<double>& k = kernels_[l];
    const auto dv = layer.ssm.d.data();
    std::vector<double> out(row);
    const std::vector<double>& cur = hist.back();
    for (std::size_t i = 0; i < row; ++i) out[i] = cur[i] + dv[i % h] * cur[i];
    const std::size_t span = t_ - window_.start(t_);
    for (std::size_t j = 0; j <= span; ++j) {
      const std::vector<double>& src = hist[t_ - j];
      for (std::size_t i = 0; i < row; ++i) out[i] += k[(i % h) * max_steps_ + j] * src[i];
    }
    v = Tensor::from(full, std::move(out));
  }
  ++t_;
  Tensor y = model_.decode(v);
  Shape os = y.shape();
  os.erase(os.begin() + 1);
  return ad::reshape(y, os);
}

}  // namespace memno::nn

#pragma once

// MemNO: factorized Fourier (FFNO) spatial layers interleaved with a diagonal
// state-space (S4D) memory layer that runs along time at every grid point.
//
// Tensors are batched as [B, T, spatial..., channels]. Output t of a forward
// pass is the prediction for time t+1.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "memno/tensor.hpp"

namespace memno::nn {

struct ModelConfig {
  std::string layers = "SSTSS";
  std::size_t hidden = 32;
  std::size_t expanded = 128;
  std::size_t k_max = 0;  // 0 binds to ⌊f/2⌋
  std::size_t n_ssm = 16;
  std::size_t dims = 1;
  std::size_t window = 0;       // memory window K, 0 = unlimited
  std::size_t reset = 0;        // memory reset interval, 0 = none
  std::size_t multi_input = 0;  // 0 = standard encoder
  double dt_min = 1e-3;
  double dt_max = 1e-1;

  void validate() const;
  std::size_t modes(std::size_t f) const;
  std::size_t input_channels() const { return (multi_input == 0 ? 1 : multi_input) + dims; }
  std::size_t count(char kind) const;

  std::string to_text() const;  // key=value lines
  static ModelConfig from_text(const std::string& text);
};

// How the memory layer limits its view of the past. Chunked splits the
// sequence into independent length-`window` blocks; sliding lets step t see
// steps t-window+1..t. Reset zeroes the state every `reset` steps.
struct Windowing {
  std::size_t window = 0;
  std::size_t reset = 0;
  bool sliding = false;

  // First step visible from step t.
  std::size_t start(std::size_t t) const;
};

struct FfnoParams {
  std::vector<ad::ComplexTensor> r;  // one [k_max, h, h] per axis
  ad::Tensor w1, b1, w2, b2;         // [h,h'], [h'], [h',h], [h]
};

struct SsmParams {
  ad::Tensor log_dt;      // [h]
  ad::Tensor log_neg_re;  // [h, N], Re A = -exp(.)
  ad::Tensor a_im;        // [h, N]
  ad::Tensor c;           // [h, N, 2]
  ad::Tensor d;           // [h]

  std::size_t channels() const { return log_dt.numel(); }
  std::size_t states() const { return a_im.dim(1); }
};

class InstabilityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// 1D: [f] with E_i = i/L. 2D: [f, f, 2] with E_ij = (i/L_x, j/L_y).
ad::Tensor positional_encoding(std::size_t f, double length);
ad::Tensor positional_encoding_2d(std::size_t f, double length_x, double length_y);

// v: [N, f, h] or [N, f, f, h].
ad::Tensor ffno_layer(const ad::Tensor& v, const FfnoParams& p);

// K[c, j] = Σ_n Re(C_n Ā_n^j B̄_n), Ā = exp(ΔA), B̄ = (Ā - 1)/A (B = 1).
ad::Tensor ssm_kernel(const SsmParams& p, std::size_t length);

// y[b,t,p,c] = Σ_{j=0}^{t-start(t)} K[c,j] u[b,t-j,p,c] + D[c] u[b,t,p,c].
ad::Tensor causal_conv(const ad::Tensor& u, const ad::Tensor& kernel, const ad::Tensor& d, const Windowing& w);

// Residual S4D layer on v: [B, T, P, h].
ad::Tensor memory_layer(const ad::Tensor& v, const SsmParams& p, const Windowing& w);

// Explicit recurrence x_k = Ā x_{k-1} + B̄ u_k, y_k = Re(C x_k) + D u_k for one
// channel; the reference the convolution is checked against.
std::vector<double> ssm_recurrence(const SsmParams& p, std::size_t channel, const std::vector<double>& u);

std::size_t ffno_param_count(std::size_t h, std::size_t h_expanded, std::size_t k_max, std::size_t dims);

class MemNO {
 public:
  MemNO(ModelConfig config, std::size_t resolution, double length, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t resolution() const { return resolution_; }
  double length() const { return length_; }
  std::size_t modes() const { return modes_; }

  // Every trainable tensor, in a fixed order.
  std::vector<ad::Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;
  void set_parameters(const std::vector<double>& flat);
  std::vector<double> flat_parameters() const;

  // inputs: [B, T, spatial...] or, with multi-input K, [B, T, spatial..., K].
  ad::Tensor forward(const ad::Tensor& inputs) const;
  ad::Tensor forward(const ad::Tensor& inputs, const Windowing& w) const;

  ad::Tensor encode(const ad::Tensor& inputs) const;  // -> [B, T, spatial..., h]
  ad::Tensor decode(const ad::Tensor& hidden) const;  // -> [B, T, spatial...]

  FfnoParams& ffno(std::size_t layer);
  SsmParams& ssm(std::size_t layer);
  ad::Tensor& encoder_weight() { return enc_w_; }
  ad::Tensor& encoder_bias() { return enc_b_; }
  ad::Tensor& decoder_weight() { return dec_w_; }
  ad::Tensor& decoder_bias() { return dec_b_; }

 private:
  friend class Rollout;

  struct Layer {
    char kind = 'S';
    FfnoParams ffno;
    SsmParams ssm;
  };

  std::size_t spatial_size() const;

  ModelConfig config_;
  std::size_t resolution_;
  double length_;
  std::size_t modes_;
  ad::Tensor positional_;  // [spatial..., d]
  ad::Tensor enc_w_, enc_b_, dec_w_, dec_b_;
  std::vector<Layer> layers_;
};

// Step-by-step autoregressive inference that keeps each memory layer's input
// history, so each step costs one spatial pass instead of a full re-run.
// Matches MemNO::forward on the same inputs.
class Rollout {
 public:
  Rollout(const MemNO& model, std::size_t batch, std::size_t max_steps, Windowing w);
  Rollout(const MemNO& model, std::size_t batch, std::size_t max_steps);

  // input: [B, spatial...] (or [B, spatial..., K]); returns [B, spatial...].
  ad::Tensor step(const ad::Tensor& input);
  std::size_t steps() const { return t_; }

 private:
  const MemNO& model_;
  std::size_t batch_;
  std::size_t max_steps_;
  Windowing window_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> kernels_;               // per layer: [h, max_steps]
  std::vector<std::vector<std::vector<double>>> history_;  // per layer, per step: [B*P*h]
};

}  // namespace memno::nn

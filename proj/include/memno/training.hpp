#pragma once

// Loss, noise injection, Adam, learning-rate schedules, teacher-forced
// training and autoregressive evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memno/neural.hpp"
#include "memno/pde.hpp"
#include "memno/tensor.hpp"

namespace memno::train {

// ‖truth - pred‖₂ / ‖truth‖₂ over all points.
double nrmse(std::span<const double> pred, std::span<const double> truth);

// Mean nRMSE over the leading rows of pred/truth, each row being one state of
// `state_size` points. Differentiable in pred.
ad::Tensor nrmse_loss(const ad::Tensor& pred, const ad::Tensor& truth, std::size_t state_size);

void inject_noise(std::span<double> u, double sigma, std::mt19937_64& rng);

enum class Schedule { Cosine, StepHalving, Constant };
std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& name);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch = 16;
  Schedule schedule = Schedule::Cosine;
  std::size_t halving_period = 90;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::size_t window = 0;  // 0 keeps the model's own window
  bool teacher_forcing = true;
  double clip_norm = 1.0;

  void validate() const;
  std::string to_text() const;
};

// Learning rate at optimisation step `step` (0-based) of `total_steps`, in `epoch`.
double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps, std::size_t epoch);

class Adam {
 public:
  Adam(std::vector<ad::Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(double lr);
  void zero_grad();
  // Global L2 norm of the current gradients.
  double grad_norm() const;
  void scale_grads(double s);

 private:
  std::vector<ad::Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_nrmse = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::size_t steps = 0;
  void write_csv(std::ostream& os) const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch);
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

// Teacher-forced inputs/targets for the given trajectories:
// inputs [B, T', spatial...(, K)], targets [B, T', spatial...].
struct Batch {
  ad::Tensor inputs;
  ad::Tensor targets;
};
Batch make_batch(const nn::MemNO& model, const pde::TrajectorySet& data, std::span<const std::size_t> trajectories,
                 double noise_sigma, std::mt19937_64& rng);

// Central-difference check of the teacher-forced nRMSE gradient with respect
// to every model parameter. Parameters are restored afterwards.
ad::GradCheckResult parameter_grad_check(nn::MemNO& model, const Batch& batch, double h = 1e-5);

// Mean teacher-forced nRMSE of the model over the whole dataset (no noise).
double teacher_forced_loss(const nn::MemNO& model, const pde::TrajectorySet& data, std::size_t batch = 16);

TrainResult train(nn::MemNO& model, const pde::TrajectorySet& data, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& progress = {});

struct EvalConfig {
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::size_t window = 0;  // 0 keeps the model's own window
  std::size_t batch = 64;
};

struct EvalReport {
  std::vector<double> per_step;  // index t = time index; entries before first_step are 0
  std::size_t first_step = 1;
  double mean = 0.0;  // over t = first_step..N_t
  std::size_t n_traj = 0;
  std::string provenance;
  void write_csv(std::ostream& os, bool header = true) const;
};

// Autoregressive rollout from the initial state (or the first K states with
// multi-input K), feeding back predictions.
EvalReport evaluate(const nn::MemNO& model, const pde::TrajectorySet& data, const EvalConfig& cfg = {});

}  // namespace memno::train

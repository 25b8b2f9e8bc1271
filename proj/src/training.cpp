#include "memno/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

namespace memno::train {

using ad::Node;
using ad::Shape;
using ad::Tensor;

double nrmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("nrmse: size mismatch");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    num += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    den += truth[i] * truth[i];
  }
  if (den == 0.0) throw std::domain_error("nrmse: truth has zero norm");
  return std::sqrt(num / den);
}

Tensor nrmse_loss(const Tensor& pred, const Tensor& truth, std::size_t state_size) {
  if (pred.shape() != truth.shape()) {
    throw ad::ShapeError("nrmse_loss: " + ad::shape_str(pred.shape()) + " vs " + ad::shape_str(truth.shape()));
  }
  if (state_size == 0 || pred.numel() % state_size != 0) throw ad::ShapeError("nrmse_loss: bad state size");
  const std::size_t rows = pred.numel() / state_size;
  std::vector<double> err(rows), norm(rows);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto p = pred.data().subspan(r * state_size, state_size);
    const auto t = truth.data().subspan(r * state_size, state_size);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < state_size; ++i) {
      num += (p[i] - t[i]) * (p[i] - t[i]);
      den += t[i] * t[i];
    }
    if (den == 0.0) throw std::domain_error("nrmse_loss: target state " + std::to_string(r) + " has zero norm");
    err[r] = std::sqrt(num);
    norm[r] = std::sqrt(den);
    total += err[r] / norm[r];
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  return ad::make_result({}, {total * inv_rows}, {pred, truth},
                         [rows, state_size, inv_rows, err = std::move(err), norm = std::move(norm)](Node& self) {
    Node& pp = *self.parents[0];
    if (!pp.requires_grad) return;
    const Node& pt = *self.parents[1];
    auto g = pp.grad_buffer();
    const double up = self.grad[0] * inv_rows;
    for (std::size_t r = 0; r < rows; ++r) {
      if (err[r] == 0.0) continue;
      const double s = up / (err[r] * norm[r]);
      for (std::size_t i = r * state_size; i < (r + 1) * state_size; ++i) g[i] += s * (pp.value[i] - pt.value[i]);
    }
  });
}

void inject_noise(std::span<double> u, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("inject_noise: sigma must be >= 0");
  if (sigma == 0.0) return;
  std::normal_distribution<double> nd(0.0, sigma);
  for (auto& x : u) x += nd(rng);
}

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::Cosine: return "cosine";
    case Schedule::StepHalving: return "step";
    case Schedule::Constant: return "constant";
  }
  return "?";
}

Schedule parse_schedule(const std::string& name) {
  if (name == "cosine") return Schedule::Cosine;
  if (name == "step") return Schedule::StepHalving;
  if (name == "constant") return Schedule::Constant;
  throw std::invalid_argument("unknown schedule '" + name + "' (cosine|step|constant)");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be finite and >= 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  if (schedule == Schedule::StepHalving && halving_period < 1) throw std::invalid_argument("halving period must be >= 1");
  if (!teacher_forcing) throw std::invalid_argument("only teacher-forced training is supported");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "lr=" << lr << "\nepochs=" << epochs << "\nbatch=" << batch << "\nschedule=" << to_string(schedule)
     << "\nhalving_period=" << halving_period << "\nnoise_sigma=" << noise_sigma << "\nseed=" << seed
     << "\nwindow=" << window << "\nteacher_forcing=" << (teacher_forcing ? 1 : 0) << "\nclip_norm=" << clip_norm
     << "\noptimizer=adam(0.9,0.999,1e-8)\n";
  return os.str();
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps, std::size_t epoch) {
  switch (cfg.schedule) {
    case Schedule::Cosine: {
      const double frac = total_steps == 0 ? 0.0 : static_cast<double>(step) / static_cast<double>(total_steps);
      return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    }
    case Schedule::StepHalving:
      return cfg.lr * std::pow(0.5, static_cast<double>(epoch / cfg.halving_period));
    case Schedule::Constant:
      return cfg.lr;
  }
  return cfg.lr;
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto x = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      x[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double Adam::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_)
    if (p.has_grad())
      for (double g : p.grad()) s += g * g;
  return std::sqrt(s);
}

void Adam::scale_grads(double s) {
  for (auto& p : params_)
    if (p.has_grad())
      for (double& g : p.mutable_grad()) g *= s;
}

void TrainResult::write_csv(std::ostream& os) const {
  os << "epoch,lr,train_nrmse\n";
  os.precision(10);
  for (const auto& r : curve) os << r.epoch << ',' << r.lr << ',' << r.train_nrmse << '\n';
}

TrainingDiverged::TrainingDiverged(std::size_t epoch, std::size_t batch)
    : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch)),
      epoch_(epoch),
      batch_(batch) {}

namespace {

void check_binding(const nn::MemNO& model, const pde::TrajectorySet& data) {
  const std::size_t d = model.config().dims;
  if (data.spatial.size() != d || data.resolution() != model.resolution()) {
    throw std::invalid_argument("dataset resolution " + std::to_string(data.resolution()) + " (" +
                                std::to_string(data.spatial.size()) + "D) does not match model resolution " +
                                std::to_string(model.resolution()) + " (" + std::to_string(d) + "D)");
  }
  const std::size_t k = std::max<std::size_t>(model.config().multi_input, 1);
  if (data.n_times() < k + 1) throw std::invalid_argument("dataset has too few timesteps for the model");
}

Shape spatial_shape(const pde::TrajectorySet& data) { return data.spatial; }

}  // namespace

Batch make_batch(const nn::MemNO& model, const pde::TrajectorySet& data, std::span<const std::size_t> trajectories,
                 double noise_sigma, std::mt19937_64& rng) {
  check_binding(model, data);
  const std::size_t nb = trajectories.size();
  const std::size_t ss = data.state_size();
  const std::size_t nt = data.n_times() - 1;
  const std::size_t k = model.config().multi_input;
  const std::size_t first = k == 0 ? 0 : k - 1;  // first input index
  const std::size_t steps = nt - first;

  // Noisy copies of every input state, noise drawn in a fixed order.
  std::vector<double> noisy(nb * nt * ss);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < nt; ++t) {
      const auto src = data.state(trajectories[b], t);
      std::copy(src.begin(), src.end(), noisy.begin() + static_cast<std::ptrdiff_t>((b * nt + t) * ss));
    }
  inject_noise(noisy, noise_sigma, rng);

  Shape in_shape{nb, steps};
  Shape out_shape{nb, steps};
  for (auto e : spatial_shape(data)) {
    in_shape.push_back(e);
    out_shape.push_back(e);
  }
  std::vector<double> in;
  if (k == 0) {
    in = std::move(noisy);
  } else {
    in_shape.push_back(k);
    in.assign(nb * steps * ss * k, 0.0);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t s = 0; s < steps; ++s)
        for (std::size_t q = 0; q < k; ++q) {
          const double* src = noisy.data() + (b * nt + s + q) * ss;  // state s + q = t - (k-1) + q
          double* dst = in.data() + (b * steps + s) * ss * k;
          for (std::size_t i = 0; i < ss; ++i) dst[i * k + q] = src[i];
        }
  }
  std::vector<double> out(nb * steps * ss);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t s = 0; s < steps; ++s) {
      const auto src = data.state(trajectories[b], first + s + 1);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>((b * steps + s) * ss));
    }
  return {Tensor::from(std::move(in_shape), std::move(in)), Tensor::from(std::move(out_shape), std::move(out))};
}

ad::GradCheckResult parameter_grad_check(nn::MemNO& model, const Batch& batch, double h) {
  const std::size_t ss = batch.targets.numel() / (batch.targets.dim(0) * batch.targets.dim(1));
  auto params = model.parameters();
  for (auto& p : params) p.zero_grad();
  const Tensor loss = nrmse_loss(model.forward(batch.inputs), batch.targets, ss);
  if (!std::isfinite(loss.item())) throw ad::NonFiniteError("parameter_grad_check: loss is not finite", 0);
  loss.backward();

  ad::NoGradGuard guard;
  ad::GradCheckResult result;
  std::size_t offset = 0;
  for (auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
    auto x = p.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      const double fp = nrmse_loss(model.forward(batch.inputs), batch.targets, ss).item();
      x[i] = saved - h;
      const double fm = nrmse_loss(model.forward(batch.inputs), batch.targets, ss).item();
      x[i] = saved;
      const double central = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_index = offset + i;
      }
    }
    offset += x.size();
    p.zero_grad();
  }
  return result;
}

double teacher_forced_loss(const nn::MemNO& model, const pde::TrajectorySet& data, std::size_t batch) {
  ad::NoGradGuard guard;
  std::mt19937_64 rng(0);
  double total = 0.0;
  for (std::size_t start = 0; start < data.n_traj; start += batch) {
    std::vector<std::size_t> idx(std::min(batch, data.n_traj - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto b = make_batch(model, data, idx, 0.0, rng);
    total += nrmse_loss(model.forward(b.inputs), b.targets, data.state_size()).item() * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.n_traj);
}

TrainResult train(nn::MemNO& model, const pde::TrajectorySet& data, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& progress) {
  cfg.validate();
  check_binding(model, data);
  const nn::Windowing w{cfg.window > 0 ? cfg.window : model.config().window, model.config().reset, false};
  std::mt19937_64 rng(cfg.seed);
  Adam opt(model.parameters());
  const std::size_t per_epoch = (data.n_traj + cfg.batch - 1) / cfg.batch;
  const std::size_t total = per_epoch * cfg.epochs;
  std::vector<std::size_t> order(data.n_traj);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    double lr = 0.0;
    for (std::size_t bi = 0; bi < per_epoch; ++bi) {
      const std::size_t start = bi * cfg.batch;
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch, data.n_traj - start));
      const auto b = make_batch(model, data, idx, cfg.noise_sigma, rng);
      opt.zero_grad();
      const Tensor loss = nrmse_loss(model.forward(b.inputs, w), b.targets, data.state_size());
      const double value = loss.item();
      if (!std::isfinite(value)) throw TrainingDiverged(epoch, bi);
      loss.backward();
      if (cfg.clip_norm > 0.0) {
        const double norm = opt.grad_norm();
        if (!std::isfinite(norm)) throw TrainingDiverged(epoch, bi);
        if (norm > cfg.clip_norm) opt.scale_grads(cfg.clip_norm / norm);
      }
      lr = scheduled_lr(cfg, step, total, epoch);
      opt.step(lr);
      ++step;
      sum += value * static_cast<double>(idx.size());
    }
    opt.zero_grad();
    EpochRecord rec{epoch, lr, sum / static_cast<double>(data.n_traj)};
    result.curve.push_back(rec);
    if (progress) progress(rec);
  }
  result.steps = step;
  return result;
}

void EvalReport::write_csv(std::ostream& os, bool header) const {
  if (header) os << "t,nrmse\n";
  os.precision(10);
  for (std::size_t t = first_step; t < per_step.size(); ++t) os << t << ',' << per_step[t] << '\n';
}

EvalReport evaluate(const nn::MemNO& model, const pde::TrajectorySet& data, const EvalConfig& cfg) {
  check_binding(model, data);
  if (cfg.batch < 1) throw std::invalid_argument("evaluate: batch must be >= 1");
  ad::NoGradGuard guard;
  const nn::Windowing w{cfg.window > 0 ? cfg.window : model.config().window, model.config().reset, true};
  const std::size_t ss = data.state_size();
  const std::size_t n_times = data.n_times();
  const std::size_t k = model.config().multi_input;
  const std::size_t first = k == 0 ? 0 : k - 1;
  std::mt19937_64 rng(cfg.seed);

  EvalReport rep;
  rep.first_step = first + 1;
  rep.per_step.assign(n_times, 0.0);
  rep.n_traj = data.n_traj;

  Shape state_shape = data.spatial;
  for (std::size_t start = 0; start < data.n_traj; start += cfg.batch) {
    const std::size_t nb = std::min(cfg.batch, data.n_traj - start);
    nn::Rollout roll(model, nb, n_times - 1 - first, w);
    // history[t] holds the (clean) state the model treats as time t.
    std::vector<std::vector<double>> history(n_times, std::vector<double>(nb * ss));
    for (std::size_t t = 0; t <= first; ++t)
      for (std::size_t b = 0; b < nb; ++b) {
        const auto src = data.state(start + b, t);
        std::copy(src.begin(), src.end(), history[t].begin() + static_cast<std::ptrdiff_t>(b * ss));
      }
    for (std::size_t t = first; t + 1 < n_times; ++t) {
      Shape in_shape{nb};
      in_shape.insert(in_shape.end(), state_shape.begin(), state_shape.end());
      std::vector<double> in;
      if (k == 0) {
        in = history[t];
        inject_noise(in, cfg.noise_sigma, rng);
      } else {
        in_shape.push_back(k);
        in.assign(nb * ss * k, 0.0);
        for (std::size_t q = 0; q < k; ++q) {
          std::vector<double> s = history[t + 1 - k + q];
          inject_noise(s, cfg.noise_sigma, rng);
          for (std::size_t i = 0; i < nb * ss; ++i) in[i * k + q] = s[i];
        }
      }
      const Tensor pred = roll.step(Tensor::from(in_shape, std::move(in)));
      history[t + 1].assign(pred.data().begin(), pred.data().end());
      for (std::size_t b = 0; b < nb; ++b) {
        rep.per_step[t + 1] += nrmse(pred.data().subspan(b * ss, ss), data.state(start + b, t + 1));
      }
    }
  }
  double acc = 0.0;
  for (std::size_t t = rep.first_step; t < n_times; ++t) {
    rep.per_step[t] /= static_cast<double>(data.n_traj);
    acc += rep.per_step[t];
  }
  rep.mean = acc / static_cast<double>(n_times - rep.first_step);
  std::ostringstream prov;
  prov << "layers=" << model.config().layers << ";window=" << w.window << ";sliding=1;noise_sigma=" << cfg.noise_sigma
       << ";seed=" << cfg.seed << ";pde=" << pde::to_string(data.spec.kind) << ";nu=" << data.spec.nu;
  rep.provenance = prov.str();
  return rep;
}

}  // namespace memno::train

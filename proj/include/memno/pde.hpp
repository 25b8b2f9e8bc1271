#pragma once

// Ground-truth solvers and initial-condition samplers.
//
// KS and Burgers are marched with ETDRK4 on a Fourier pseudospectral
// discretisation (2/3-rule dealiasing). NS2D uses the vorticity-streamfunction
// form on the unit torus with explicit advection and Crank-Nicolson diffusion.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memno/spectral.hpp"

namespace memno::pde {

enum class PdeKind { KS, Burgers, Linear, NS2D };

std::string to_string(PdeKind kind);
PdeKind parse_pde_kind(const std::string& name);

struct SolverSpec {
  PdeKind kind = PdeKind::KS;
  double nu = 0.1;
  double length = 64.0;
  double final_time = 2.5;
  std::size_t n_t = 25;  // saved intervals; N_t + 1 states including t = 0
  double dt = 2e-3;      // internal step
  std::size_t resolution = 256;
  std::uint64_t seed = 0;
  bool nonlinear = true;
  bool forcing = true;  // NS2D only

  static SolverSpec ks();
  static SolverSpec burgers();
  static SolverSpec ns2d();

  void validate() const;
  double save_interval() const { return final_time / static_cast<double>(n_t); }
  std::vector<double> times() const;

  std::string to_text() const;  // key=value lines
  static SolverSpec from_text(const std::string& text);
};

class SolverDivergence : public std::runtime_error {
 public:
  SolverDivergence(const std::string& solver, double time);
  double time() const { return time_; }

 private:
  double time_;
};

// Stack of trajectories [n_traj, n_t + 1, spatial...] with provenance.
struct TrajectorySet {
  SolverSpec spec;
  std::size_t n_traj = 0;
  std::vector<std::size_t> spatial;  // {f} or {f, f}
  std::vector<double> times;
  std::vector<double> data;

  std::size_t n_times() const { return times.size(); }
  std::size_t state_size() const;
  std::size_t resolution() const { return spatial.empty() ? 0 : spatial.front(); }
  std::span<const double> state(std::size_t traj, std::size_t step) const;
  std::span<double> state(std::size_t traj, std::size_t step);
  // Throws std::invalid_argument on inconsistent extents or non-finite data.
  void validate() const;
};

std::vector<double> sample_sinusoid_ic(std::uint64_t seed, const spectral::Grid1D& grid);
std::vector<double> sample_grf_ic_2d(std::uint64_t seed, std::size_t f);

// Each returns (n_t + 1) consecutive states, the first being the input.
std::vector<double> ks_solve(const SolverSpec& spec, std::span<const double> u0);
std::vector<double> burgers_solve(const SolverSpec& spec, std::span<const double> u0);
std::vector<double> ns2d_solve(const SolverSpec& spec, std::span<const double> w0);

// max_k |i k1 û + i k2 v̂| for the velocity reconstructed from vorticity w (f×f).
double ns2d_spectral_divergence(std::span<const double> w, std::size_t f);

class FourierSymbol {
 public:
  FourierSymbol(long max_mode, const std::function<spectral::cplx(long)>& c);
  static FourierSymbol diffusion(double d, long max_mode);

  long max_mode() const { return max_mode_; }
  spectral::cplx operator()(long k) const;

 private:
  long max_mode_;
  std::vector<spectral::cplx> values_;
};

// û_k(t) = exp(C_k t) ĝ_k.
spectral::SpectralField linear_evolve(const FourierSymbol& symbol, const spectral::SpectralField& g, double t);

// Seed of trajectory `index` in a batch generated from `seed`.
std::uint64_t trajectory_seed(std::uint64_t seed, std::uint64_t index);

// Generates n_traj trajectories at spec.resolution and reduces them to
// out_resolution (cubic spline in 1D, stride in 2D). threads = 0 picks the
// MEMNO_THREADS / hardware default.
TrajectorySet generate(const SolverSpec& spec, std::size_t n_traj, std::size_t out_resolution,
                       std::size_t threads = 0);

// Same trajectories on a coarser grid (spline in 1D, stride in 2D).
TrajectorySet reduce_resolution(const TrajectorySet& ts, std::size_t target);

// ω_f over every (trajectory, timestep) state of a dataset.
struct OmegaStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t samples = 0;
};
OmegaStats dataset_omega(const TrajectorySet& ts, std::size_t f);

// Worker count from MEMNO_THREADS, else hardware concurrency.
std::size_t default_threads();

}  // namespace memno::pde

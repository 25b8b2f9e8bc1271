#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "memno/mori_zwanzig.hpp"
#include "memno/neural.hpp"
#include "memno/pde.hpp"
#include "memno/store.hpp"
#include "memno/training.hpp"

namespace fs = std::filesystem;
using namespace memno;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw store::StoreError(store::ErrorKind::Io, dir, "cannot create directory: " + ec.message());
}

// Flags (defaults included) plus the literal command line.
void write_meta(const fs::path& dir, const std::string& name, const CLI::App& sub, const std::string& cmdline,
                const std::string& extra = {}) {
  std::ostringstream os;
  os << "command=" << cmdline << "\nsubcommand=" << name << '\n' << sub.config_to_str(true, false) << extra;
  store::write_text_atomic(dir / (name + ".meta.txt"), os.str());
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOpts {
  std::string pde = "ks";
  std::optional<double> nu, final_time, dt;
  std::optional<std::size_t> n_t, resolution;
  std::size_t save_resolution = 0;
  std::size_t train_n = 0;
  std::size_t test_n = 0;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::string out;
};

std::uint64_t test_seed(std::uint64_t seed) { return pde::trajectory_seed(seed, std::uint64_t{1} << 40); }

int run_generate(const GenerateOpts& o, const CLI::App& sub, const std::string& cmdline) {
  pde::SolverSpec spec;
  const auto kind = pde::parse_pde_kind(o.pde);
  switch (kind) {
    case pde::PdeKind::KS: spec = pde::SolverSpec::ks(); break;
    case pde::PdeKind::Burgers: spec = pde::SolverSpec::burgers(); break;
    case pde::PdeKind::NS2D: spec = pde::SolverSpec::ns2d(); break;
    case pde::PdeKind::Linear: throw UsageError("--pde linear has no trajectory sampler");
  }
  if (o.nu) spec.nu = *o.nu;
  if (o.final_time) spec.final_time = *o.final_time;
  if (o.dt) spec.dt = *o.dt;
  if (o.n_t) spec.n_t = *o.n_t;
  if (o.resolution) spec.resolution = *o.resolution;
  spec.seed = o.seed;
  spec.validate();
  if (o.train_n == 0) throw UsageError("--train-n must be at least 1");
  const std::size_t save = o.save_resolution == 0 ? spec.resolution : o.save_resolution;

  const fs::path dir(o.out);
  ensure_dir(dir);
  const auto train = pde::generate(spec, o.train_n, save, o.threads);
  store::write_dataset(train, dir / "train.mno");
  std::cout << "wrote " << (dir / "train.mno").string() << " (" << o.train_n << " trajectories, resolution " << save
            << ")\n";
  if (o.test_n > 0) {
    auto tspec = spec;
    tspec.seed = test_seed(o.seed);
    const auto test = pde::generate(tspec, o.test_n, save, o.threads);
    store::write_dataset(test, dir / "test.mno");
    std::cout << "wrote " << (dir / "test.mno").string() << " (" << o.test_n << " trajectories)\n";
  }
  write_meta(dir, "generate", sub, cmdline,
             "train_seed=" + std::to_string(o.seed) + "\ntest_seed=" + std::to_string(test_seed(o.seed)) + '\n');
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string train;
  std::size_t resolution = 0;
  std::string config = "SSTSS";
  std::size_t hidden = 32;
  std::size_t expanded = 0;
  std::size_t modes = 0;
  std::size_t n_ssm = 16;
  std::size_t window = 0;
  std::size_t reset = 0;
  std::size_t multi_input = 0;
  double noise_sigma = 0.0;
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch = 16;
  std::string schedule = "cosine";
  std::size_t halving_period = 90;
  std::uint64_t seed = 0;
  bool quiet = false;
  std::string out;
};

pde::TrajectorySet load_at(const std::string& path, std::size_t resolution) {
  auto ts = store::read_dataset(path);
  if (resolution != 0 && resolution != ts.resolution()) {
    if (resolution > ts.resolution()) {
      throw UsageError("--resolution " + std::to_string(resolution) + " exceeds the dataset resolution " +
                       std::to_string(ts.resolution()));
    }
    ts = pde::reduce_resolution(ts, resolution);
  }
  return ts;
}

int run_train(const TrainOpts& o, const CLI::App& sub, const std::string& cmdline) {
  const auto data = load_at(o.train, o.resolution);
  nn::ModelConfig mc;
  mc.layers = o.config;
  mc.hidden = o.hidden;
  mc.expanded = o.expanded == 0 ? 4 * o.hidden : o.expanded;
  mc.k_max = o.modes;
  mc.n_ssm = o.n_ssm;
  mc.dims = data.spatial.size();
  mc.window = o.window;
  mc.reset = o.reset;
  mc.multi_input = o.multi_input;
  mc.validate();

  train::TrainConfig tc;
  tc.lr = o.lr;
  tc.epochs = o.epochs;
  tc.batch = o.batch;
  tc.schedule = train::parse_schedule(o.schedule);
  tc.halving_period = o.halving_period;
  tc.noise_sigma = o.noise_sigma;
  tc.seed = o.seed;
  tc.validate();

  const fs::path dir(o.out);
  ensure_dir(dir);
  nn::MemNO model(mc, data.resolution(), data.spec.length, o.seed);
  std::cout << "training " << mc.layers << " at resolution " << data.resolution() << " on " << data.n_traj
            << " trajectories, " << model.parameter_count() << " parameters\n";
  const auto result = train::train(model, data, tc, [&](const train::EpochRecord& r) {
    if (!o.quiet) std::cout << "epoch " << r.epoch << " lr " << r.lr << " train_nrmse " << r.train_nrmse << '\n';
  });
  store::write_checkpoint(dir / "model.mno", model, tc.to_text());
  store::write_text_atomic(dir / "config.txt", mc.to_text());
  std::ostringstream curve;
  result.write_csv(curve);
  store::write_text_atomic(dir / "curve.csv", curve.str());
  write_meta(dir, "train", sub, cmdline,
             "dataset_resolution=" + std::to_string(data.resolution()) + "\n" + mc.to_text() + tc.to_text());
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string checkpoint;
  std::string test;
  std::size_t resolution = 0;
  std::vector<std::size_t> windows{0};
  std::vector<double> noise{0.0};
  std::uint64_t seed = 0;
  std::size_t batch = 64;
  std::string out;
};

int run_eval(const EvalOpts& o, const CLI::App& sub, const std::string& cmdline) {
  const auto ck = store::read_checkpoint(o.checkpoint);
  const auto model = ck.model();
  const auto data = load_at(o.test, o.resolution);
  if (data.resolution() != model.resolution() || data.spatial.size() != model.config().dims) {
    throw UsageError("resolution mismatch: checkpoint is " + std::to_string(model.resolution()) + ", dataset is " +
                     std::to_string(data.resolution()) + " (use --resolution to reduce the dataset)");
  }
  const fs::path dir(o.out);
  ensure_dir(dir);
  std::ostringstream rows, summary;
  rows.precision(10);
  summary.precision(10);
  rows << "config,resolution,window,noise_sigma,t,nrmse\n";
  summary << "config,resolution,window,noise_sigma,mean_nrmse,first_step_nrmse,n_traj\n";
  for (double sigma : o.noise)
    for (std::size_t k : o.windows) {
      train::EvalConfig ec;
      ec.noise_sigma = sigma;
      ec.seed = o.seed;
      ec.window = k;
      ec.batch = o.batch;
      const auto rep = train::evaluate(model, data, ec);
      const std::size_t w = k == 0 ? model.config().window : k;
      for (std::size_t t = rep.first_step; t < rep.per_step.size(); ++t) {
        rows << model.config().layers << ',' << data.resolution() << ',' << w << ',' << sigma << ',' << t << ','
             << rep.per_step[t] << '\n';
      }
      summary << model.config().layers << ',' << data.resolution() << ',' << w << ',' << sigma << ',' << rep.mean
              << ',' << rep.per_step[rep.first_step] << ',' << rep.n_traj << '\n';
      std::cout << "window " << w << " noise " << sigma << " mean nRMSE " << rep.mean << '\n';
    }
  store::write_text_atomic(dir / "eval.csv", rows.str());
  store::write_text_atomic(dir / "summary.csv", summary.str());
  write_meta(dir, "eval", sub, cmdline);
  return kOk;
}

// ---------------------------------------------------------------------------
// mz-verify

struct MzOpts {
  std::vector<double> b{2.0, 5.0, 10.0};
  std::vector<double> t{0.25, 0.5, 1.0};
  std::vector<double> a0{1.0, 0.5};
  std::size_t n_oracle = 64;
  std::size_t quad_steps = 256;
  std::vector<std::size_t> gle_f{4, 8};
  std::size_t gle_cases = 20;
  std::uint64_t seed = 0;
  double tol = 1e-6;
  std::string out;
};

int run_mz_verify(const MzOpts& o, const CLI::App& sub, const std::string& cmdline) {
  if (o.a0.size() != 2) throw UsageError("--a0 takes exactly two coefficients");
  const mz::Coeffs2 a0{o.a0[0], o.a0[1]};
  auto times = o.t;
  std::sort(times.begin(), times.end());
  for (double b : o.b)
    if (b < 0.0) throw UsageError("--B values must be >= 0");
  const fs::path dir(o.out);
  ensure_dir(dir);

  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  std::ostringstream gap, lemmas, oracle, gle;
  for (auto* os : {&gap, &lemmas, &oracle, &gle}) os->precision(12);
  gap << "B,t,norm_u1,norm_u2,norm_gap,r1,r2,r2_floor,in_scope,pass\n";
  lemmas << "lemma,B,t,closed_vs_series,min_ratio,max_ratio,bounds_ok,b_min,in_scope,pass\n";
  oracle << "B,t,projection_a0,projection_a1,quadrature_a0,quadrature_a1,rel_deviation,n_oracle,refined_change,pass\n";
  gle << "f,band,case,t,deviation,pass\n";

  for (double b : o.b) {
    const auto rep = mz::theorem_gap_report(b, a0, times, 0.0, -1.0, o.n_oracle);
    double prev_r1 = 0.0;
    for (const auto& r : rep.rows) {
      const bool in_scope = b > 0.0 && b >= mz::lemma_l1_check(b, r.t).b_min;
      bool pass = r.r1_ok;
      if (b == 0.0) pass = pass && r.norm_gap <= 1e-12 * r.norm_u1;
      if (in_scope) pass = pass && r.r2_ok && r.r1 > 0.0 && r.r1 >= prev_r1;
      prev_r1 = r.r1;
      expect(pass, "gap B=" + std::to_string(b) + " t=" + std::to_string(r.t));
      gap << b << ',' << r.t << ',' << r.norm_u1 << ',' << r.norm_u2 << ',' << r.norm_gap << ',' << r.r1 << ','
          << r.r2 << ',' << rep.r2_floor << ',' << in_scope << ',' << pass << '\n';
    }

    for (double t : times) {
      if (t <= 0.0) continue;
      const auto p = mz::memory_evolve_projection(b, a0, t, o.n_oracle);
      const auto q = mz::memory_evolve_quadrature(b, a0, t, o.quad_steps, o.n_oracle);
      const auto p2 = mz::memory_evolve_projection(b, a0, t, 2 * o.n_oracle);
      const double scale = std::max(std::hypot(p[0], p[1]), 1e-300);
      const double dev = std::hypot(p[0] - q[0], p[1] - q[1]) / scale;
      const double refine = std::hypot(p[0] - p2[0], p[1] - p2[1]) / scale;
      const bool pass = dev <= o.tol;
      expect(pass, "quadrature vs projection B=" + std::to_string(b) + " t=" + std::to_string(t));
      oracle << b << ',' << t << ',' << p[0] << ',' << p[1] << ',' << q[0] << ',' << q[1] << ',' << dev << ','
             << o.n_oracle << ',' << refine << ',' << pass << '\n';
    }

    if (b > 0.0) {
      for (double t : times) {
        if (t <= 0.0) continue;
        const auto l = mz::lemma_l1_check(b, t);
        const bool in_scope = b >= l.b_min;
        const bool pass = l.closed_vs_series <= 1e-8 && (!in_scope || l.bounds_ok);
        expect(pass, "lemma l1 B=" + std::to_string(b) + " t=" + std::to_string(t));
        lemmas << "l1," << b << ',' << t << ',' << l.closed_vs_series << ',' << l.min_ratio << ',' << l.max_ratio << ','
               << l.bounds_ok << ',' << l.b_min << ',' << in_scope << ',' << pass << '\n';
      }
      const auto l = mz::lemma_l2_check(b);
      const bool in_scope = b >= l.b_min;
      const bool pass = l.closed_vs_series <= 1e-8 && (!in_scope || l.bounds_ok);
      expect(pass, "lemma l2 B=" + std::to_string(b));
      lemmas << "l2," << b << ",1," << l.closed_vs_series << ',' << l.min_ratio << ',' << l.max_ratio << ','
             << l.bounds_ok << ',' << l.b_min << ',' << in_scope << ',' << pass << '\n';
    }
  }

  double worst = 0.0;
  for (const auto& c : mz::gle_random_suite(o.gle_f, o.gle_cases, o.seed)) {
    const bool pass = c.deviation <= o.tol;
    worst = std::max(worst, c.deviation);
    expect(pass, "gle f=" + std::to_string(c.f) + " F=" + std::to_string(c.band));
    gle << c.f << ',' << c.band << ',' << c.index << ',' << c.t << ',' << c.deviation << ',' << pass << '\n';
  }
  for (std::size_t f : o.gle_f) {
    const auto chk = mz::band_limited_memory_check(f, o.gle_cases, o.seed);
    expect(chk.beta0 == 0.0 && chk.eta0 == 0.0, "band-limited memory f=" + std::to_string(f));
  }

  store::write_text_atomic(dir / "mz_gap.csv", gap.str());
  store::write_text_atomic(dir / "mz_lemmas.csv", lemmas.str());
  store::write_text_atomic(dir / "mz_oracle.csv", oracle.str());
  store::write_text_atomic(dir / "mz_gle.csv", gle.str());
  write_meta(dir, "mz-verify", sub, cmdline);

  std::cout << "mz-verify: worst GLE deviation " << worst << ", " << failures.size() << " failing check(s)\n";
  for (const auto& f : failures) std::cout << "  FAIL " << f << '\n';
  if (!failures.empty()) throw CheckFailed(std::to_string(failures.size()) + " check(s) failed");
  return kOk;
}

// ---------------------------------------------------------------------------
// omega

struct OmegaOpts {
  std::vector<std::string> data;
  std::vector<std::size_t> f{16, 32, 64, 128};
  std::string out;
};

int run_omega(const OmegaOpts& o, const CLI::App& sub, const std::string& cmdline) {
  std::ostringstream csv;
  csv.precision(12);
  csv << "dataset,f,omega_mean,omega_std\n";
  for (const auto& path : o.data) {
    const auto ts = store::read_dataset(path);
    for (std::size_t f : o.f) {
      if (f > ts.resolution()) {
        throw UsageError("f=" + std::to_string(f) + " exceeds the resolution " + std::to_string(ts.resolution()) +
                         " of " + path);
      }
      const auto s = pde::dataset_omega(ts, f);
      csv << path << ',' << f << ',' << s.mean << ',' << s.std << '\n';
    }
  }
  const fs::path out(o.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  store::write_text_atomic(out, csv.str());
  write_meta(out.has_parent_path() ? out.parent_path() : fs::path("."), "omega", sub, cmdline);
  std::cout << csv.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  ad::retain_freed_memory();
  CLI::App app{"Memory neural operators: data generation, training, evaluation and Mori-Zwanzig checks"};
  app.require_subcommand(1);
  const std::string cmdline = command_line(argc, argv);

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate", "Solve a PDE for random initial conditions and store train/test sets");
  g->add_option("--pde", gen.pde, "ks | burgers | ns2d")->check(CLI::IsMember({"ks", "burgers", "ns2d"}));
  g->add_option("--nu", gen.nu, "Viscosity");
  g->add_option("--train-n", gen.train_n, "Training trajectories")->required();
  g->add_option("--test-n", gen.test_n, "Test trajectories");
  g->add_option("--resolution", gen.resolution, "Solver grid points per axis");
  g->add_option("--save-resolution", gen.save_resolution, "Stored grid points per axis (default: solver grid)");
  g->add_option("--final-time", gen.final_time, "Final time");
  g->add_option("--n-t", gen.n_t, "Saved intervals");
  g->add_option("--dt", gen.dt, "Internal time step");
  g->add_option("--seed", gen.seed, "Base seed");
  g->add_option("--threads", gen.threads, "Worker threads (default MEMNO_THREADS or all cores)");
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "Teacher-forced training of a MemNO model");
  t->add_option("--train", tr.train, "Training dataset")->required();
  t->add_option("--resolution", tr.resolution, "Reduce the dataset to this resolution first");
  t->add_option("--config", tr.config, "Layer string over {S, T}, e.g. SSTSS or SSSS");
  t->add_option("--hidden", tr.hidden, "Hidden width h");
  t->add_option("--expanded", tr.expanded, "Feed-forward width h' (default 4h)");
  t->add_option("--modes", tr.modes, "Fourier modes k_max (default floor(f/2))");
  t->add_option("--n-ssm", tr.n_ssm, "State size of each memory layer");
  t->add_option("--window", tr.window, "Memory window K (0 = unlimited)");
  t->add_option("--reset", tr.reset, "Memory reset interval (0 = none)");
  t->add_option("--multi-input-k", tr.multi_input, "Feed the last K states as channels (0 = off)");
  t->add_option("--noise-sigma", tr.noise_sigma, "Gaussian noise added to inputs");
  t->add_option("--lr", tr.lr, "Learning rate");
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--batch", tr.batch, "Batch size");
  t->add_option("--schedule", tr.schedule, "cosine | step | constant")
      ->check(CLI::IsMember({"cosine", "step", "constant"}));
  t->add_option("--halving-period", tr.halving_period, "Epochs between halvings for --schedule step");
  t->add_option("--seed", tr.seed, "Seed for initialisation, shuffling and noise");
  t->add_flag("--quiet", tr.quiet, "No per-epoch output");
  t->add_option("--out", tr.out, "Output directory")->required();

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "Autoregressive evaluation of a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint written by train")->required();
  e->add_option("--test", ev.test, "Test dataset")->required();
  e->add_option("--resolution", ev.resolution, "Reduce the dataset to this resolution first");
  e->add_option("--window", ev.windows, "Memory windows to sweep (0 = the model's own)")->delimiter(',');
  e->add_option("--noise-sigma", ev.noise, "Input noise levels to sweep")->delimiter(',');
  e->add_option("--seed", ev.seed, "Noise seed");
  e->add_option("--batch", ev.batch, "Trajectories per rollout batch");
  e->add_option("--out", ev.out, "Output directory")->required();

  MzOpts mzo;
  auto* m = app.add_subcommand("mz-verify", "Mori-Zwanzig memory theorem, lemma and GLE checks");
  m->add_option("--B", mzo.b, "Coupling strengths")->delimiter(',');
  m->add_option("--t", mzo.t, "Times")->delimiter(',');
  m->add_option("--a0", mzo.a0, "Initial coefficients a0,a1")->delimiter(',');
  m->add_option("--n-oracle", mzo.n_oracle, "Truncation of the projection oracle");
  m->add_option("--quad-steps", mzo.quad_steps, "Quadrature steps");
  m->add_option("--gle-f", mzo.gle_f, "Observed resolutions for the GLE suite")->delimiter(',');
  m->add_option("--gle-cases", mzo.gle_cases, "Random inputs per (f, F)");
  m->add_option("--seed", mzo.seed, "Seed for the GLE suite");
  m->add_option("--tol", mzo.tol, "Tolerance for oracle agreement");
  m->add_option("--out", mzo.out, "Output directory")->required();

  OmegaOpts om;
  auto* w = app.add_subcommand("omega", "Unobserved energy fraction per resolution");
  w->add_option("--data", om.data, "Datasets")->required()->delimiter(',');
  w->add_option("--f", om.f, "Resolutions")->delimiter(',');
  w->add_option("--out", om.out, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (g->parsed()) return run_generate(gen, *g, cmdline);
    if (t->parsed()) return run_train(tr, *t, cmdline);
    if (e->parsed()) return run_eval(ev, *e, cmdline);
    if (m->parsed()) return run_mz_verify(mzo, *m, cmdline);
    if (w->parsed()) return run_omega(om, *w, cmdline);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kUsage;
  } catch (const store::StoreError& err) {
    std::cerr << err.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "io error: " << err.what() << '\n';
    return kIo;
  } catch (const CheckFailed& err) {
    std::cerr << "verification failed: " << err.what() << '\n';
    return kNumeric;
  } catch (const std::exception& err) {
    std::cerr << "numeric failure: " << err.what() << '\n';
    return kNumeric;
  }
  return kUsage;
}

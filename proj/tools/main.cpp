// Command-line front end: train / evaluate the recursive-utility policy
// optimizer, run the closed-form benchmark validation, seed studies and
// ablations. Exit codes: 0 ok, 1 validation failure, 2 configuration error,
// 3 diverged run.

#include "pgdpo/config.hpp"
#include "pgdpo/evaluation.hpp"
#include "pgdpo/io.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace pgdpo;

namespace {

std::string utc_now() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct CommonOpts {
  std::string config_path, out;
  uint64_t seed = 0;
  bool seed_given = false;
  int iterations = 0;
  int threads = 0;
  bool reference_mode = false;
};

void attach_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config_path, "configuration file (INI)")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "override the training seed")
      ->each([&o](const std::string&) { o.seed_given = true; });
  sub->add_option("--out", o.out, "output directory root");
  sub->add_option("--iterations", o.iterations, "override training iterations");
  sub->add_option("--threads", o.threads, "Eigen thread count");
  sub->add_flag("--reference-mode", o.reference_mode,
                "shrink all sizes to a fast deterministic reference run");
}

void apply_reference_mode(RunConfig& cfg) {
  cfg.train.iterations = std::min(cfg.train.iterations, 25);
  cfg.train.batch = std::min(cfg.train.batch, 32);
  cfg.train.steps = std::min(cfg.train.steps, 16);
  cfg.train.width = std::min(cfg.train.width, 32);
  cfg.train.hidden_layers = std::min(cfg.train.hidden_layers, 2);
  cfg.train.stop_tol = 0.0;
  cfg.eval.mc_paths = std::min(cfg.eval.mc_paths, 2000);
  cfg.eval.value_eval_iterations = std::min(cfg.eval.value_eval_iterations, 20);
  cfg.eval.bootstrap = std::min(cfg.eval.bootstrap, 100);
  cfg.eval.surface_nw = std::min(cfg.eval.surface_nw, 4);
  cfg.eval.surface_ny = std::min(cfg.eval.surface_ny, 4);
  cfg.eval.grid_nt = std::min(cfg.eval.grid_nt, 4);
  cfg.eval.grid_nw = std::min(cfg.eval.grid_nw, 9);
  cfg.eval.n_seeds = std::min(cfg.eval.n_seeds, 2);
}

RunConfig make_cfg(const CommonOpts& o, bool validation_defaults) {
  RunConfig cfg = o.config_path.empty()
                      ? (validation_defaults ? validation_config() : default_config())
                      : load_config(o.config_path);
  if (o.seed_given) cfg.train.seed = o.seed;
  if (!o.out.empty()) cfg.io.out_dir = o.out;
  if (o.iterations > 0) cfg.train.iterations = o.iterations;
  if (o.reference_mode) apply_reference_mode(cfg);
  if (o.threads > 0) Eigen::setNbThreads(o.threads);
  cfg.validate();
  return cfg;
}

Checkpoint triple_checkpoint(const NetworkTriple& nets, const RunConfig& cfg) {
  Checkpoint ck;
  ck.meta.emplace_back("config", serialize_config(cfg));
  ck.entries.push_back({"value", nets.value, false, {}});
  ck.entries.push_back({"costate", nets.costate, false, {}});
  ck.entries.push_back({"policy", nets.policy, false, {}});
  return ck;
}

NetworkTriple load_triple(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  NetworkTriple nets;
  const auto* v = ck.find("value");
  const auto* c = ck.find("costate");
  const auto* p = ck.find("policy");
  require(v && c && p, "checkpoint " + path + " is missing a network");
  nets.value = v->net;
  nets.costate = c->net;
  nets.policy = p->net;
  return nets;
}

CsvTable log_table(const std::vector<LogRow>& log, int cadence) {
  CsvTable t;
  t.columns = {"iter",
               "value_loss",
               "adjoint_loss",
               "actor_objective",
               "floor_rate",
               "cons_floor_rate",
               "cons_cap_rate",
               "portfolio_active_rate",
               "raw_projection_distance",
               "executed_infeasibility"};
  t.column_notes = {
      "training iteration (0-based)",
      "mean squared one-step recursion residual",
      "mean squared costate-vs-value-gradient mismatch",
      "batch Hamiltonian objective (drift-only, after regularizer)",
      "fraction of (path, step) slots with the wealth floor binding",
      "fraction with consumption clipped at its lower bound",
      "fraction with consumption clipped at the cap",
      "fraction with an active portfolio constraint",
      "mean relative distance of raw controls to the admissible set",
      "mean distance of executed controls to the admissible set"};
  for (size_t i = 0; i < log.size(); ++i) {
    if (cadence > 1 && log[i].iter % cadence != 0 && i + 1 != log.size())
      continue;
    const LogRow& r = log[i];
    t.rows.push_back({static_cast<double>(r.iter), r.value_loss, r.adjoint_loss,
                      r.actor_objective, r.floor_rate, r.cons_floor_rate,
                      r.cons_cap_rate, r.portfolio_active_rate,
                      r.raw_projection_distance, r.executed_infeasibility});
  }
  return t;
}

void progress(const LogRow& r, int total) {
  if (r.iter % 50 == 0 || r.iter + 1 == total)
    std::fprintf(stderr,
                 "iter %5d/%d  value %.3e  adjoint %.3e  J %.6f  infeas %.2e\n",
                 r.iter, total, r.value_loss, r.adjoint_loss, r.actor_objective,
                 r.executed_infeasibility);
}

TrainResult run_training(const RunConfig& cfg, const std::string& run_dir,
                         const NetworkTriple* warm, const std::string& suffix,
                         std::vector<std::string>& files) {
  TrainResult res = train(
      cfg.prob, cfg.train, warm,
      [&](const LogRow& r, const NetworkTriple& nets) {
        progress(r, cfg.train.iterations);
        if (cfg.io.checkpoint_cadence > 0 && r.iter > 0 &&
            r.iter % cfg.io.checkpoint_cadence == 0) {
          const std::string name =
              "checkpoint" + suffix + "-iter" + std::to_string(r.iter) + ".txt";
          save_checkpoint((fs::path(run_dir) / name).string(),
                          triple_checkpoint(nets, cfg));
          files.push_back(name);
        }
      });
  const std::string log_name = "training_log" + suffix + ".csv";
  write_csv((fs::path(run_dir) / log_name).string(),
            log_table(res.log, cfg.io.log_cadence));
  files.push_back(log_name);
  files.push_back(log_name + ".schema.txt");
  const std::string ck_name = "checkpoint" + suffix + ".txt";
  save_checkpoint((fs::path(run_dir) / ck_name).string(),
                  triple_checkpoint(res.nets, cfg));
  files.push_back(ck_name);
  return res;
}

void write_config_artifact(const RunConfig& cfg, const std::string& run_dir,
                           std::vector<std::string>& files) {
  write_text_atomic((fs::path(run_dir) / "config.ini").string(),
                    serialize_config(cfg));
  files.push_back("config.ini");
}

std::string metric(double v) { return format_double(v); }

// ------------------------------------------------------------ evaluation ----

struct EvalArtifacts {
  ValueEstimate ve;
  double ez_ce = 0;
  TerminalStats ts;
  Vec mean_abs_hedge;
  double spearman = 0;
  RegressionResult rr;
  ProjectionDiagnostics dg;
};

struct SimSummary {
  Vec wT;              // terminal wealth, one entry per path
  Vec t, mean_W, sd_W; // per-node wealth statistics
  ProjectionDiagnostics dg;
};

SimSummary simulate_summary(const Problem& prob, const PolicyFn& pol, int paths,
                            int steps, uint64_t seed) {
  SimOptions opts;
  opts.constraint = prob.pc;
  opts.c_bar = prob.ez.c_bar;
  SimSummary s;
  s.wT.resize(paths);
  Vec sum = Vec::Zero(steps + 1), sumsq = Vec::Zero(steps + 1);
  const int block = 16384;
  for (int done = 0; done < paths; done += block) {
    const int Mb = std::min(block, paths - done);
    PathBatch b = simulate_batch(prob.mkt, pol, Mb, steps,
                                 RngStream::derive(seed, 0x717, done), opts);
    if (done == 0) s.t = b.t;
    s.wT.segment(done, Mb) = b.W.col(steps);
    sum += b.W.colwise().sum().transpose();
    sumsq += b.W.array().square().colwise().sum().matrix().transpose();
    const ProjectionDiagnostics dg = diagnostics(b);
    const double wgt = static_cast<double>(Mb) / paths;
    s.dg.portfolio_binding_rate += wgt * dg.portfolio_binding_rate;
    s.dg.consumption_binding_rate += wgt * dg.consumption_binding_rate;
    s.dg.floor_hit_rate += wgt * dg.floor_hit_rate;
    s.dg.mean_relative_projection_distance +=
        wgt * dg.mean_relative_projection_distance;
  }
  s.mean_W = sum / paths;
  s.sd_W.resize(steps + 1);
  for (int k = 0; k <= steps; ++k) {
    const double var =
        std::max(0.0, sumsq[k] / paths - s.mean_W[k] * s.mean_W[k]);
    s.sd_W[k] = std::sqrt(var);
  }
  return s;
}

void export_paths_csv(const Problem& prob, const PolicyFn& pol, int n_paths,
                      int steps, uint64_t seed, const std::string& run_dir,
                      std::vector<std::string>& files) {
  SimOptions opts;
  opts.constraint = prob.pc;
  opts.c_bar = prob.ez.c_bar;
  PathBatch b = simulate_batch(prob.mkt, pol, n_paths, steps,
                               RngStream::derive(seed, 0x9A7B), opts);
  CsvTable t;
  t.columns = {"path", "t", "W", "Y"};
  t.column_notes = {"path index", "time", "wealth (start of step)",
                    "factor level"};
  for (int a = 0; a < prob.mkt.d; ++a) {
    t.columns.push_back("pi_" + std::to_string(a + 1));
    t.column_notes.push_back("executed weight, asset " + std::to_string(a + 1));
  }
  t.columns.insert(t.columns.end(), {"c", "flags"});
  t.column_notes.insert(t.column_notes.end(),
                        {"executed consumption level",
                         "bit flags: 1 floor hit, 2 consumption floor, "
                         "4 consumption cap, 8 portfolio constraint active"});
  for (int m = 0; m < b.M; ++m)
    for (int k = 0; k < b.N; ++k) {
      std::vector<double> row = {static_cast<double>(m), b.t[k], b.W(m, k),
                                 b.Y(m, k)};
      for (int a = 0; a < b.d; ++a) row.push_back(b.pi[k](m, a));
      row.push_back(b.c(m, k));
      row.push_back(static_cast<double>(b.flags(m, k)));
      t.rows.push_back(std::move(row));
    }
  write_csv((fs::path(run_dir) / "paths.csv").string(), t);
  files.push_back("paths.csv");
  files.push_back("paths.csv.schema.txt");
}

EvalArtifacts evaluate_policy(const RunConfig& cfg, const NetworkTriple& nets,
                              const std::string& run_dir,
                              const std::string& suffix,
                              std::vector<std::string>& files) {
  const Problem& prob = cfg.prob;
  const uint64_t seed = cfg.train.seed;
  PolicyFn pol = [&nets](double t, const Vec& W, const Vec& Y) {
    return policy_controls(nets.policy, t, W, Y);
  };

  EvalArtifacts ea;
  ea.ve = evaluate_ez_value(prob, pol, cfg.train, cfg.eval.value_eval_iterations,
                            RngStream::derive(seed, 0xEE01));
  ea.ez_ce = ez_certainty_equivalent(ea.ve.value, prob.ez.R);
  const SimSummary sim = simulate_summary(prob, pol, cfg.eval.mc_paths,
                                          cfg.train.steps,
                                          RngStream::derive(seed, 0xEE02));
  ea.ts = terminal_wealth_stats(sim.wT);
  ea.dg = sim.dg;

  {  // mean wealth path
    CsvTable t;
    t.columns = {"t", "mean_wealth", "sd_wealth"};
    t.column_notes = {"time grid node", "cross-path mean of W_t",
                      "cross-path standard deviation of W_t"};
    for (int k = 0; k < sim.t.size(); ++k)
      t.rows.push_back({sim.t[k], sim.mean_W[k], sim.sd_W[k]});
    const std::string name = "wealth_paths" + suffix + ".csv";
    write_csv((fs::path(run_dir) / name).string(), t);
    files.push_back(name);
    files.push_back(name + ".schema.txt");
  }
  {  // constraint-activity diagnostics
    CsvTable t;
    t.columns = {"portfolio_binding_rate", "consumption_binding_rate",
                 "floor_hit_rate", "mean_relative_projection_distance"};
    t.column_notes = {"fraction of (path, step) slots with an active portfolio "
                      "constraint",
                      "fraction with consumption clipped (floor or cap)",
                      "fraction with the wealth floor binding",
                      "mean |P(pi_raw) - pi_raw| / (|pi_raw| + 1e-8)"};
    t.rows.push_back({sim.dg.portfolio_binding_rate,
                      sim.dg.consumption_binding_rate, sim.dg.floor_hit_rate,
                      sim.dg.mean_relative_projection_distance});
    const std::string name = "diagnostics" + suffix + ".csv";
    write_csv((fs::path(run_dir) / name).string(), t);
    files.push_back(name);
    files.push_back(name + ".schema.txt");
  }

  const int nw = cfg.eval.surface_nw, ny = cfg.eval.surface_ny;
  Vec w_grid(nw), y_grid(ny);
  for (int i = 0; i < nw; ++i)
    w_grid[i] = nw > 1 ? cfg.eval.grid_w_lo +
                             (cfg.eval.grid_w_hi - cfg.eval.grid_w_lo) * i / (nw - 1.0)
                       : cfg.eval.grid_w_lo;
  const double ys = prob.mkt.y_stationary_sd();
  for (int j = 0; j < ny; ++j)
    y_grid[j] = ny > 1 ? prob.mkt.y_bar + ys * (-2.0 + 4.0 * j / (ny - 1.0))
                       : prob.mkt.y_bar;
  HedgingSurface hs = hedging_surfaces(prob, nets.policy, prob.mkt.T / 2.0,
                                       w_grid, y_grid, cfg.eval.surface_dpi_dy);
  ea.mean_abs_hedge = mean_abs_hedging_by_asset(hs);
  std::vector<int> ranks(prob.mkt.d);
  for (int a = 0; a < prob.mkt.d; ++a) ranks[a] = a + 1;
  ea.spearman = prob.mkt.d >= 2
                    ? spearman_rank_correlation(ea.mean_abs_hedge, ranks)
                    : 1.0;
  ea.rr = hedging_regression(prob, hs, cfg.eval.bootstrap,
                             RngStream::derive(seed, 0xEE03));

  {  // value + CE + terminal statistics
    CsvTable t;
    t.columns = {"value", "value_se", "ez_ce", "wT_mean", "wT_sd",
                 "wT_skewness", "wT_kurtosis_excess", "wT_q05", "wT_q50", "wT_q95"};
    t.column_notes = {"policy-evaluated recursive value at (0, w0, y_bar)",
                      "standard error of the recursion rollup",
                      "certainty-equivalent wealth ((1-R) V0)^(1/(1-R))",
                      "terminal wealth mean",
                      "terminal wealth sd",
                      "terminal wealth skewness",
                      "terminal wealth excess kurtosis",
                      "terminal wealth 5% quantile",
                      "terminal wealth median",
                      "terminal wealth 95% quantile"};
    t.rows.push_back({ea.ve.value, ea.ve.se, ea.ez_ce, ea.ts.mean, ea.ts.sd,
                      ea.ts.skewness, ea.ts.kurtosis_excess, ea.ts.q05, ea.ts.q50,
                      ea.ts.q95});
    const std::string name = "value_estimate" + suffix + ".csv";
    write_csv((fs::path(run_dir) / name).string(), t);
    files.push_back(name);
    files.push_back(name + ".schema.txt");
  }
  {  // long-format hedging surface
    CsvTable t;
    t.columns = {"w", "y", "asset", "pi", "myopic", "hedge", "dpi_dy",
                 "consumption_ratio"};
    t.column_notes = {"wealth grid point",
                      "factor grid point",
                      "asset index (0-based)",
                      "executed portfolio weight",
                      "constrained myopic weight",
                      "hedging demand (pi - myopic)",
                      "central-difference d pi / d y (0 when disabled)",
                      "executed consumption / wealth"};
    for (int a = 0; a < prob.mkt.d; ++a)
      for (int i = 0; i < nw; ++i)
        for (int j = 0; j < ny; ++j)
          t.rows.push_back({w_grid[i], y_grid[j], static_cast<double>(a),
                            hs.pi[a](i, j), hs.myopic[a](i, j), hs.hedge[a](i, j),
                            hs.dpi_dy.empty() ? 0.0 : hs.dpi_dy[a](i, j),
                            hs.consumption_ratio(i, j)});
    const std::string name = "hedging_surface" + suffix + ".csv";
    write_csv((fs::path(run_dir) / name).string(), t);
    files.push_back(name);
    files.push_back(name + ".schema.txt");
  }
  {  // per-characteristic univariate regressions + per-asset |hedge|
    CsvTable t;
    t.columns = {"characteristic", "slope", "se", "tstat", "r2", "intercept", "n"};
    t.column_notes = {"0 rho, 1 beta_lrr, 2 sharpe, 3 sigma",
                      "univariate OLS slope of |hedge| on the characteristic",
                      "pairs-bootstrap standard error",
                      "slope / se",
                      "univariate R^2",
                      "OLS intercept",
                      "observations (grid points x assets)"};
    for (size_t c = 0; c < ea.rr.fits.size(); ++c) {
      const OlsFit& f = ea.rr.fits[c];
      t.rows.push_back({static_cast<double>(c), f.slope, f.se, f.tstat, f.r2,
                        f.intercept, static_cast<double>(f.n)});
    }
    const std::string name = "hedging_regression" + suffix + ".csv";
    write_csv((fs::path(run_dir) / name).string(), t);
    files.push_back(name);
    files.push_back(name + ".schema.txt");

    CsvTable m;
    m.columns = {"asset", "mean_abs_hedge"};
    m.column_notes = {"asset index (0-based)",
                      "mean |hedging demand| over the (w, y) surface"};
    for (int a = 0; a < prob.mkt.d; ++a)
      m.rows.push_back({static_cast<double>(a), ea.mean_abs_hedge[a]});
    const std::string mname = "hedging_mean_abs" + suffix + ".csv";
    write_csv((fs::path(run_dir) / mname).string(), m);
    files.push_back(mname);
    files.push_back(mname + ".schema.txt");
  }
  return ea;
}

// --------------------------------------------------------------- commands ----

int cmd_train(const RunConfig& cfg, const std::string& cmdline,
              const std::string& warm_path) {
  const std::string run_dir = make_run_dir(cfg.io.out_dir, "train", cfg.train.seed);
  std::fprintf(stderr, "run dir: %s\n", run_dir.c_str());
  RunManifest mf;
  mf.command = cmdline;
  mf.config_text = serialize_config(cfg);
  mf.seed = cfg.train.seed;
  mf.started_utc = utc_now();
  write_config_artifact(cfg, run_dir, mf.files);

  NetworkTriple warm;
  const NetworkTriple* warm_ptr = nullptr;
  if (!warm_path.empty()) {
    warm = load_triple(warm_path);
    warm_ptr = &warm;
  }
  TrainResult res = run_training(cfg, run_dir, warm_ptr, "", mf.files);

  mf.finished_utc = utc_now();
  mf.wall_seconds = res.wall_seconds;
  mf.metrics.emplace_back("iterations_run", std::to_string(res.iterations_run));
  mf.metrics.emplace_back("stopped_early", res.stopped_early ? "true" : "false");
  if (!res.log.empty()) {
    mf.metrics.emplace_back("final_value_loss", metric(res.log.back().value_loss));
    mf.metrics.emplace_back("final_adjoint_loss", metric(res.log.back().adjoint_loss));
    mf.metrics.emplace_back("final_actor_objective",
                            metric(res.log.back().actor_objective));
  }
  write_manifest(run_dir, mf);
  std::printf("trained %d iterations (%s); artifacts in %s\n", res.iterations_run,
              res.stopped_early ? "stabilized" : "budget", run_dir.c_str());
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& cmdline,
                 const std::string& ckpt, int export_paths) {
  NetworkTriple nets = load_triple(ckpt);
  require(nets.policy.spec().out_dim == cfg.prob.mkt.d + 1,
          "checkpoint is incompatible with the configured market: policy "
          "output dim " + std::to_string(nets.policy.spec().out_dim) +
          " (= assets + 1 = " + std::to_string(nets.policy.spec().out_dim - 1) +
          " + 1) vs configured d = " + std::to_string(cfg.prob.mkt.d));
  const std::string run_dir =
      make_run_dir(cfg.io.out_dir, "evaluate", cfg.train.seed);
  std::fprintf(stderr, "run dir: %s\n", run_dir.c_str());
  RunManifest mf;
  mf.command = cmdline;
  mf.config_text = serialize_config(cfg);
  mf.seed = cfg.train.seed;
  mf.started_utc = utc_now();
  write_config_artifact(cfg, run_dir, mf.files);

  const auto t0 = std::chrono::steady_clock::now();
  EvalArtifacts ea = evaluate_policy(cfg, nets, run_dir, "", mf.files);
  if (export_paths > 0) {
    PolicyFn pol = [&nets](double t, const Vec& W, const Vec& Y) {
      return policy_controls(nets.policy, t, W, Y);
    };
    export_paths_csv(cfg.prob, pol, export_paths, cfg.train.steps,
                     cfg.train.seed, run_dir, mf.files);
  }

  mf.finished_utc = utc_now();
  mf.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  mf.metrics.emplace_back("value", metric(ea.ve.value));
  mf.metrics.emplace_back("value_se", metric(ea.ve.se));
  mf.metrics.emplace_back("ez_ce", metric(ea.ez_ce));
  mf.metrics.emplace_back("spearman_hedge_rank", metric(ea.spearman));
  mf.metrics.emplace_back("portfolio_binding_rate",
                          metric(ea.dg.portfolio_binding_rate));
  mf.metrics.emplace_back("consumption_binding_rate",
                          metric(ea.dg.consumption_binding_rate));
  mf.metrics.emplace_back("floor_hit_rate", metric(ea.dg.floor_hit_rate));
  write_manifest(run_dir, mf);
  std::printf("value %.6f (se %.2e), certainty equivalent %.6f\n", ea.ve.value,
              ea.ve.se, ea.ez_ce);
  return 0;
}

int cmd_validate_merton(const RunConfig& cfg, const std::string& cmdline) {
  const MertonParams bench = induced_merton(cfg);
  merton_self_check(bench);
  const std::string run_dir =
      make_run_dir(cfg.io.out_dir, "validate-merton", cfg.train.seed);
  std::fprintf(stderr, "run dir: %s\n", run_dir.c_str());
  RunManifest mf;
  mf.command = cmdline;
  mf.config_text = serialize_config(cfg);
  mf.seed = cfg.train.seed;
  mf.started_utc = utc_now();
  write_config_artifact(cfg, run_dir, mf.files);

  TrainResult res = run_training(cfg, run_dir, nullptr, "", mf.files);
  ValidationThresholds thr;
  MertonValidationReport rep = merton_validation(
      cfg.prob, res.nets, bench, cfg.eval.grid_nt, cfg.eval.grid_nw,
      cfg.eval.grid_w_lo, cfg.eval.grid_w_hi, cfg.eval.mc_paths, cfg.train.steps,
      RngStream::derive(cfg.train.seed, 0xCE), thr);

  CsvTable t;
  t.columns = {"err_pi", "err_c", "ce_learned", "ce_analytic", "ce_gap_pct",
               "hjb_mean", "hjb_sd", "hjb_exact_max", "pass"};
  t.column_notes = {"relative RMS weight error vs the closed form",
                    "relative RMS consumption-level error vs the closed form",
                    "Monte Carlo certainty equivalent of the learned policy",
                    "Monte Carlo certainty equivalent of the closed-form policy "
                    "(common random numbers)",
                    "100 |ce_learned - ce_analytic| / ce_analytic",
                    "mean HJB residual of the trained value (plain convention)",
                    "sd of that residual",
                    "max |residual| with the closed form substituted "
                    "(finite-difference machinery check)",
                    "1 if all thresholds hold"};
  t.rows.push_back({rep.err_pi, rep.err_c, rep.ce_learned, rep.ce_analytic,
                    rep.ce_gap_pct, rep.hjb_mean, rep.hjb_sd, rep.hjb_exact_max,
                    rep.pass ? 1.0 : 0.0});
  write_csv((fs::path(run_dir) / "merton_report.csv").string(), t);
  mf.files.push_back("merton_report.csv");
  mf.files.push_back("merton_report.csv.schema.txt");

  mf.finished_utc = utc_now();
  mf.wall_seconds = res.wall_seconds;
  mf.exit_code = rep.pass ? 0 : 1;
  mf.metrics.emplace_back("err_pi", metric(rep.err_pi));
  mf.metrics.emplace_back("err_c", metric(rep.err_c));
  mf.metrics.emplace_back("ce_gap_pct", metric(rep.ce_gap_pct));
  mf.metrics.emplace_back("hjb_exact_max", metric(rep.hjb_exact_max));
  mf.metrics.emplace_back("pass", rep.pass ? "true" : "false");
  write_manifest(run_dir, mf);

  std::printf("err_pi %.4f  err_c %.4f  ce_gap %.3f%%  hjb_exact %.2e  %s\n",
              rep.err_pi, rep.err_c, rep.ce_gap_pct, rep.hjb_exact_max,
              rep.pass ? "PASS" : "FAIL");
  return rep.pass ? 0 : 1;
}

int cmd_seed_study(const RunConfig& cfg, const std::string& cmdline, int n_seeds) {
  const int n = n_seeds > 0 ? n_seeds : cfg.eval.n_seeds;
  const std::string run_dir =
      make_run_dir(cfg.io.out_dir, "seed-study", cfg.train.seed);
  std::fprintf(stderr, "run dir: %s\n", run_dir.c_str());
  RunManifest mf;
  mf.command = cmdline;
  mf.config_text = serialize_config(cfg);
  mf.seed = cfg.train.seed;
  mf.started_utc = utc_now();
  write_config_artifact(cfg, run_dir, mf.files);

  CsvTable t;
  t.columns = {"seed", "iterations_run", "stopped_early", "value", "value_se",
               "ez_ce"};
  t.column_notes = {"training seed",
                    "iterations until the stabilization stop (or the cap)",
                    "1 if the stabilization rule fired",
                    "policy-evaluated recursive value at (0, w0, y_bar)",
                    "standard error of the recursion rollup",
                    "certainty-equivalent wealth"};
  Vec ces(n);
  double wall = 0.0;
  for (int k = 0; k < n; ++k) {
    RunConfig c = cfg;
    c.train.seed = cfg.train.seed + static_cast<uint64_t>(k);
    std::fprintf(stderr, "--- seed %llu ---\n",
                 static_cast<unsigned long long>(c.train.seed));
    const std::string sfx = "-seed" + std::to_string(c.train.seed);
    TrainResult res = run_training(c, run_dir, nullptr, sfx, mf.files);
    wall += res.wall_seconds;
    PolicyFn pol = [&res](double tt, const Vec& W, const Vec& Y) {
      return policy_controls(res.nets.policy, tt, W, Y);
    };
    ValueEstimate ve =
        evaluate_ez_value(c.prob, pol, c.train, c.eval.value_eval_iterations,
                          RngStream::derive(c.train.seed, 0xEE01));
    const double ce = ez_certainty_equivalent(ve.value, c.prob.ez.R);
    ces[k] = ce;
    t.rows.push_back({static_cast<double>(c.train.seed),
                      static_cast<double>(res.iterations_run),
                      res.stopped_early ? 1.0 : 0.0, ve.value, ve.se, ce});
  }
  write_csv((fs::path(run_dir) / "seed_study.csv").string(), t);
  mf.files.push_back("seed_study.csv");
  mf.files.push_back("seed_study.csv.schema.txt");

  const double mean = ces.mean();
  const double sd = n > 1 ? std::sqrt((ces.array() - mean).square().sum() / (n - 1))
                          : 0.0;
  mf.finished_utc = utc_now();
  mf.wall_seconds = wall;
  mf.metrics.emplace_back("ce_mean", metric(mean));
  mf.metrics.emplace_back("ce_sd", metric(sd));
  mf.metrics.emplace_back("ce_rel_sd", metric(mean != 0.0 ? sd / std::abs(mean) : 0.0));
  write_manifest(run_dir, mf);
  std::printf("certainty equivalent over %d seeds: mean %.6f sd %.2e (rel %.3f%%)\n",
              n, mean, sd, mean != 0.0 ? 100.0 * sd / std::abs(mean) : 0.0);
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& cmdline,
               const std::string& which) {
  std::vector<std::string> variants =
      which.empty() ? ablation_names() : std::vector<std::string>{which};
  const std::string run_dir = make_run_dir(cfg.io.out_dir, "ablate", cfg.train.seed);
  std::fprintf(stderr, "run dir: %s\n", run_dir.c_str());
  RunManifest mf;
  mf.command = cmdline;
  mf.config_text = serialize_config(cfg);
  mf.seed = cfg.train.seed;
  mf.started_utc = utc_now();
  write_config_artifact(cfg, run_dir, mf.files);

  CsvTable t;
  t.columns = {"variant",        "iterations_run", "value",
               "value_se",       "ez_ce",          "final_exec_infeasibility",
               "final_raw_distance"};
  t.column_notes = {"0 full, 1 soft-penalty, 2 no-floor, 3 value-only, "
                    "4 adjoint-only",
                    "iterations until stop",
                    "policy-evaluated recursive value at (0, w0, y_bar)",
                    "standard error of the recursion rollup",
                    "certainty-equivalent wealth",
                    "mean executed-control infeasibility in the last iteration",
                    "mean relative raw-control projection distance in the last "
                    "iteration"};
  double wall = 0.0;
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    RunConfig c = cfg;
    c.train = ablation_variant(cfg.train, variants[vi]);
    std::fprintf(stderr, "--- variant %s ---\n", variants[vi].c_str());
    TrainResult res = run_training(c, run_dir, nullptr, "-" + variants[vi], mf.files);
    wall += res.wall_seconds;
    PolicyFn pol = [&res](double tt, const Vec& W, const Vec& Y) {
      return policy_controls(res.nets.policy, tt, W, Y);
    };
    ValueEstimate ve =
        evaluate_ez_value(c.prob, pol, c.train, c.eval.value_eval_iterations,
                          RngStream::derive(c.train.seed, 0xEE01));
    const double ce = ez_certainty_equivalent(ve.value, c.prob.ez.R);
    const LogRow& last = res.log.back();
    const auto all = ablation_names();
    const double vid = static_cast<double>(
        std::find(all.begin(), all.end(), variants[vi]) - all.begin());
    t.rows.push_back({vid, static_cast<double>(res.iterations_run), ve.value,
                      ve.se, ce, last.executed_infeasibility,
                      last.raw_projection_distance});
    mf.metrics.emplace_back("ce_" + variants[vi], metric(ce));
  }
  write_csv((fs::path(run_dir) / "ablation.csv").string(), t);
  mf.files.push_back("ablation.csv");
  mf.files.push_back("ablation.csv.schema.txt");
  mf.finished_utc = utc_now();
  mf.wall_seconds = wall;
  write_manifest(run_dir, mf);
  std::printf("ablation table written to %s\n", run_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::string cmdline;
  for (int i = 0; i < argc; ++i) {
    if (i) cmdline += ' ';
    cmdline += argv[i];
  }

  CLI::App app{"Pontryagin-guided deep policy optimization for recursive-utility "
               "consumption and investment"};
  app.require_subcommand(1);

  CommonOpts t_o, e_o, v_o, s_o, a_o;
  std::string warm_path, ckpt_path, ablation_name;
  int n_seeds = 0, export_paths = 0;

  auto* t = app.add_subcommand("train", "train the network triple");
  attach_common(t, t_o);
  t->add_option("--warm-start", warm_path, "checkpoint to initialize from")
      ->check(CLI::ExistingFile);

  auto* e = app.add_subcommand("evaluate", "evaluate a trained checkpoint");
  attach_common(e, e_o);
  e->add_option("--checkpoint", ckpt_path, "checkpoint to evaluate")
      ->required()
      ->check(CLI::ExistingFile);
  e->add_option("--export-paths", export_paths,
                "also export this many simulated paths as CSV");

  auto* v = app.add_subcommand(
      "validate-merton", "train on the single-asset benchmark and compare "
                         "against the closed form");
  attach_common(v, v_o);

  auto* s = app.add_subcommand("seed-study", "train and evaluate across seeds");
  attach_common(s, s_o);
  s->add_option("--seeds", n_seeds, "number of consecutive seeds");

  auto* a = app.add_subcommand("ablate", "run training-variant ablations");
  attach_common(a, a_o);
  a->add_option("--ablation", ablation_name,
                "run a single variant (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  try {
    if (t->parsed()) {
      RunConfig cfg = make_cfg(t_o, false);
      if (!warm_path.empty()) {
        cfg.warm_start = true;
        cfg.warm_start_path = warm_path;
      } else if (cfg.warm_start) {
        warm_path = cfg.warm_start_path;
      }
      return cmd_train(cfg, cmdline, warm_path);
    }
    if (e->parsed())
      return cmd_evaluate(make_cfg(e_o, false), cmdline, ckpt_path, export_paths);
    if (v->parsed()) return cmd_validate_merton(make_cfg(v_o, true), cmdline);
    if (s->parsed()) return cmd_seed_study(make_cfg(s_o, false), cmdline, n_seeds);
    if (a->parsed()) return cmd_ablate(make_cfg(a_o, false), cmdline, ablation_name);
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "configuration error: %s\n", ex.what());
    return 2;
  } catch (const DivergenceError& ex) {
    std::fprintf(stderr, "diverged: %s\n", ex.what());
    return 3;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  }
  return 2;
}

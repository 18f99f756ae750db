#pragma once

// Run configuration: a flat INI-style file with [section] headers and
// key = value lines (# or ; comments, comma-separated numeric lists).
// Parsing is strict: unknown sections/keys, malformed numbers and invariant
// violations raise ConfigError (CLI exit code 2). serialize() round-trips.

#include "pgdpo/evaluation.hpp"
#include "pgdpo/pgdpo.hpp"

#include <string>

namespace pgdpo {

struct EvalConfig {
  int grid_nt = 32;           // benchmark-validation time nodes
  int grid_nw = 50;           // benchmark-validation wealth nodes
  double grid_w_lo = 0.1;
  double grid_w_hi = 2.0;
  int surface_nw = 10;        // hedging/regression (W, Y) grid
  int surface_ny = 10;
  int n_seeds = 5;
  int bootstrap = 1000;
  int mc_paths = 100000;      // CE Monte Carlo paths
  int value_eval_iterations = 400;  // policy-evaluation retraining
  bool surface_dpi_dy = true;
  void validate() const;
};

struct IoConfig {
  std::string out_dir = "runs";
  int checkpoint_cadence = 0;  // every k iterations; 0 = final only
  int log_cadence = 1;         // log row every k iterations
  void validate() const;
};

struct RunConfig {
  Problem prob;
  TrainConfig train;
  EvalConfig eval;
  IoConfig io;
  bool warm_start = false;         // load a checkpoint before training
  std::string warm_start_path;

  void validate() const;
};

// 5-asset baseline (the long-run-risk experiment defaults)
RunConfig default_config();

// single-asset constant-opportunity validation setup: factor inert
// (rho = beta = 0), CRRA-limit preferences (psi = 1/R), capped portfolio set,
// consumption cap lifted to 0.99, 32 time steps
RunConfig validation_config();

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

// benchmark parameters induced by a (CRRA-limit) run configuration: the
// aggregator's delta * (u(c) - v) normalization makes the trained objective
// equivalent to the plain discounted objective with bequest kappa_b / delta
MertonParams induced_merton(const RunConfig& cfg);

}  // namespace pgdpo

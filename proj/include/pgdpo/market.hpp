#pragma once

// Market model and path simulation.
//
// One Ornstein-Uhlenbeck factor Y drives the risky drifts,
//   dY = kappa_y (y_bar - Y) dt + xi dB_0,
//   mu_i(Y) = mu_bar_i + beta_lrr_i (Y - y_bar),
// volatilities are constant. The d x (d+1) volatility matrix has column 0
// loading on the factor shock B_0 (sigma_i rho_i) and an idiosyncratic
// diagonal block (sigma_i sqrt(1 - rho_i^2) in column i+1), so row norms are
// sigma_i and corr(dS_i/S_i, dY) = rho_i by construction.
//
// Wealth follows the Euler scheme with a hard floor,
//   W' = max(w_min, W (1 + r dt + pi^T ((mu(Y) - r 1) dt + Sigma dB)) - c dt).
//
// Every path owns an RNG stream derived from (seed, path index), so batch
// results are independent of scheduling and identical for any thread count.

#include "pgdpo/common.hpp"
#include "pgdpo/projection.hpp"

#include <functional>
#include <vector>

namespace pgdpo {

struct MarketParams {
  double r = 0.02;       // risk-free rate
  double kappa_y = 0.40; // factor mean-reversion speed
  double y_bar = 0.40;   // factor long-run mean
  double xi = 0.10;      // factor volatility
  double T = 1.5;        // horizon
  int d = 5;             // number of risky assets
  Vec mu_bar;            // baseline drifts, size d
  Vec sigma;             // volatilities, size d
  Vec rho;               // correlation of each asset with the factor shock
  Vec beta_lrr;          // drift loadings on (Y - y_bar)
  double w_min = 0.1;    // wealth floor
  double w_max = 0.7;    // evaluation-band parameter (not a wealth cap)
  double w0 = 1.0;       // center of the initial-wealth band U[0.9 w0, 1.1 w0]

  void validate() const;

  Vec drift(double y) const;          // mu(Y)
  Mat vol() const;                    // Sigma, d x (d+1)
  Mat covariance() const;             // Sigma Sigma^T, d x d
  double y_stationary_sd() const { return xi / std::sqrt(2.0 * kappa_y); }

  // 5-asset baseline block and the single-asset validation market
  static MarketParams baseline();
  static MarketParams single_asset(double mu, double sigma_, double rho_ = 0.0,
                                   double beta = 0.0);
};

// one Euler step for a single path; writes binding info into *flags
void step_euler(const MarketParams& mkt, double dt, double& W, double& Y,
                const Vec& pi, double c, const Vec& dB, uint8_t* flags);

// W0 ~ U[0.9 w0, 1.1 w0], Y0 ~ N(y_bar, xi^2/(2 kappa_y)) truncated at 3 sd
void sample_initial_state(const MarketParams& mkt, RngStream& rng, double& W0,
                          double& Y0);

// Raw (pre-projection) controls for all M paths at one time node.
// pi: M x d, c: size M (consumption LEVEL, i.e. ratio output already times W).
struct RawControls {
  Mat pi;
  Vec c;
};
using PolicyFn =
    std::function<RawControls(double t, const Vec& W, const Vec& Y)>;

struct SimOptions {
  PortfolioConstraint constraint;
  double c_bar = 0.25;
  bool project = true;        // false in soft-penalty mode: raw pi executed,
                              // consumption only floor/domain-guarded
  bool enforce_floor = true;  // wealth floor on/off (off in no-floor ablation;
                              // a positivity guard at 1e-6 always remains)
  bool antithetic = false;    // unused hook, kept false
};

struct PathBatch {
  int M = 0, N = 0, d = 0;
  double dt = 0.0;
  Vec t;                    // N+1 grid nodes, t[k] = k dt
  Mat W, Y;                 // M x (N+1)
  std::vector<Mat> pi_raw;  // N entries, M x d
  std::vector<Mat> pi;      // executed portfolio weights
  Mat c_raw, c;             // M x N raw / executed consumption levels
  std::vector<Mat> dB;      // N entries, M x (d+1)
  Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic> flags;  // M x N

  double flag_rate(uint8_t mask) const;  // fraction of (path, step) slots
};

PathBatch simulate_batch(const MarketParams& mkt, const PolicyFn& policy,
                         int M, int N, uint64_t seed, const SimOptions& opts);

// binding-rate summary of a simulated batch
struct ProjectionDiagnostics {
  double portfolio_binding_rate = 0;
  double consumption_binding_rate = 0;  // floor or cap clip
  double floor_hit_rate = 0;
  // E[ |P(pi_raw) - pi_raw| / (|pi_raw| + 1e-8) ] over all (path, step)
  double mean_relative_projection_distance = 0;
};
ProjectionDiagnostics diagnostics(const PathBatch& batch);

// closed-form OU moments at horizon tau (test oracle + acceptance target)
double ou_mean(const MarketParams& mkt, double y0, double tau);
double ou_var(const MarketParams& mkt, double tau);

}  // namespace pgdpo

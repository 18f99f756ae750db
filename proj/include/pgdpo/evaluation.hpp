#pragma once

// Post-training analysis: certainty equivalents, policy evaluation of the
// recursive value, terminal-wealth statistics, hedging surfaces and their
// cross-sectional regression against asset characteristics, pointwise HJB
// residuals, and the closed-form benchmark validation.

#include "pgdpo/analytic.hpp"
#include "pgdpo/pgdpo.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace pgdpo {

// ---------------------------------------------------------- statistics ----

struct TerminalStats {
  long n = 0;
  double mean = 0, sd = 0, skewness = 0, kurtosis_excess = 0;
  double q05 = 0, q50 = 0, q95 = 0;  // linear interpolation between order stats
};
TerminalStats terminal_wealth_stats(const Vec& wT);

// ------------------------------------------------- certainty equivalents ----

// recursive-utility CE at time 0: ((1-R) V0)^(1/(1-R))
double ez_certainty_equivalent(double V0, double R);

// plain-objective CE: u^{-1}(J0 / A(T)), A(T) = int_0^T e^{-dt} dt + k e^{-dT}
double crra_certainty_equivalent(double J0, double R, double delta, double T,
                                 double kappa);

// Monte Carlo of the plain discounted objective under a policy (left-point
// quadrature on the simulation grid); returns estimate and standard error
struct McValue {
  double value = 0, se = 0;
};
McValue crra_objective_mc(const Problem& prob, const PolicyFn& policy,
                          double kappa, int paths, int steps, uint64_t seed,
                          bool project = true);

// Policy evaluation of the recursive value: freezes the policy, trains a
// fresh value net on the recursion residual only, and reports V(0, w0, ybar)
// with a standard-error band from the terminal batch residual dispersion.
struct ValueEstimate {
  double value = 0, se = 0;
  int iterations = 0;
};
ValueEstimate evaluate_ez_value(const Problem& prob, const PolicyFn& policy,
                                const TrainConfig& tc, int iterations,
                                uint64_t seed);

// --------------------------------------------------------------- hedging ----

struct HedgingSurface {
  Vec w_grid, y_grid;
  double t = 0;
  // per asset i: policy weight, myopic weight and hedging = policy - myopic
  // as (n_w x n_y) matrices
  std::vector<Mat> pi, myopic, hedge;
  std::vector<Mat> dpi_dy;  // optional central-difference sensitivities
  Mat consumption_ratio;    // n_w x n_y
};

HedgingSurface hedging_surfaces(const Problem& prob, const Mlp& policy,
                                double t, const Vec& w_grid, const Vec& y_grid,
                                bool with_dpi_dy);

// mean |hedge_i| over the surface, one entry per asset
Vec mean_abs_hedging_by_asset(const HedgingSurface& hs);

// ------------------------------------------------------------ regression ----

// one univariate OLS fit y = a + b x with pairs-bootstrap standard errors
struct OlsFit {
  double intercept = 0, slope = 0, se = 0, tstat = 0, r2 = 0;
  long n = 0;
};
OlsFit ols_bootstrap(const Vec& x, const Vec& y, int bootstrap, uint64_t seed);

// Univariate OLS of |hedging demand| on each per-asset characteristic in turn
// (rho, beta_lrr, Sharpe = (mu_bar - r)/sigma, sigma); observations =
// grid points x assets; bootstrap sub-seeds fixed per characteristic.
struct RegressionResult {
  std::vector<std::string> names;  // rho, beta_lrr, sharpe, sigma
  std::vector<OlsFit> fits;
  long n = 0;
};
RegressionResult hedging_regression(const Problem& prob, const HedgingSurface& hs,
                                    int bootstrap, uint64_t seed);

// Spearman rank correlation between |hedge| magnitudes and reference ranks
double spearman_rank_correlation(const Vec& values, const std::vector<int>& ranks);

// --------------------------------------------------------- HJB residual ----

// Scalar fields on (t, w); derivative-free interface so both network and
// closed-form values can be checked by the same finite-difference machinery.
struct ValueField {
  std::function<double(double t, double w)> V;
  // optional first W-derivative (networks: input_gradient); if absent,
  // central differences of V are used
  std::function<double(double t, double w)> Vw;
};

struct HJBGrid {
  Vec t_grid, w_grid;
  Mat residual;  // n_t x n_w
  double mean = 0, sd = 0, max_abs = 0;
};

// residual of the plain-objective HJB at the supplied controls:
//   dV/dt + [r w + piw w (mu - r) - c] Vw + 1/2 piw^2 w^2 sigma^2 Vww
//   + e^{-delta t} u(c)
// piw = portfolio weight, c = consumption level. Steps: h_t = 1e-3 * T,
// h_w = 1e-3 * (1 - w_min) on the normalized scale.
HJBGrid hjb_residual_crra(const ValueField& vf,
                          const std::function<double(double, double)>& pi_weight,
                          const std::function<double(double, double)>& cons_level,
                          const MertonParams& mp, const Vec& t_grid,
                          const Vec& w_grid, double w_min_for_scale);

// ----------------------------------------------------------- validation ----

struct MertonValidationReport {
  double err_pi = 0, err_c = 0;        // RMS over the (t, w) grid
  double ce_learned = 0, ce_analytic = 0, ce_gap_pct = 0;
  double hjb_mean = 0, hjb_sd = 0;     // trained-net residual moments
  double hjb_exact_max = 0;            // exact-substitution residual max
  bool pass = false;
};

struct ValidationThresholds {
  double err_pi = 0.05;
  double err_c = 0.05;
  double ce_gap_pct = 0.5;
  double hjb_exact = 1e-4;
  double hjb_mean_sd_ratio = 10.0;
};

MertonValidationReport merton_validation(const Problem& prob, NetworkTriple& nets,
                                         const MertonParams& bench, int n_t,
                                         int n_w, double w_lo, double w_hi,
                                         int mc_paths, int mc_steps,
                                         uint64_t seed,
                                         const ValidationThresholds& thr);

}  // namespace pgdpo

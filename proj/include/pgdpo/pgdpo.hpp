#pragma once

// Pontryagin-guided training: the value / costate / policy network triple,
// the three losses, the running Hamiltonian and its control gradients, and
// the alternating optimization loop.
//
// Per iteration:
//   1. simulate a fresh batch under the current (projected) policy;
//   2. critic step: Adam on L_value + lambda_adj * L_adjoint over the value
//      and costate parameters; both regression targets (the next-node value
//      in L_value, grad_x V in L_adjoint) are detached;
//   3. actor step: Adam ascent of the batch Hamiltonian objective through
//      the projection's generalized Jacobian.
//
// The reported Hamiltonian H = f(c, v) + p^T b(x, u) is drift-only. Because
// it is linear in pi, its literal gradient cannot have an interior maximum in
// pi; by default the actor's ascent direction augments the pi-component with
// the control-dependent diffusion curvature
//     W^2 q_WW (Sigma Sigma^T) pi + W xi q_WY (sigma o rho),
// where q_* are finite differences of the costate net (see README, "actor
// update"). Set actor_second_order = false for the literal drift-only update.

#include "pgdpo/analytic.hpp"
#include "pgdpo/market.hpp"
#include "pgdpo/nn.hpp"
#include "pgdpo/preferences.hpp"
#include "pgdpo/projection.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pgdpo {

struct Problem {
  MarketParams mkt;
  EZParams ez;
  PortfolioConstraint pc;
  void validate() const;
};

enum class SecondOrderSource { costate, value };
enum class CostateSource { costate_net, value_gradient };

struct TrainConfig {
  int steps = 128;   // N time steps
  int batch = 256;   // M paths per iteration
  int iterations = 2000;
  double lr_value = 1e-3;
  double lr_costate = 1e-3;
  double lr_policy = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda_adj = 1.0;  // weight of the adjoint loss in the critic step
  double beta_reg = 0.0;    // optional raw-policy L2 regularizer in J_act
  int hidden_layers = 3;
  int width = 128;
  Activation activation = Activation::softplus;
  uint64_t seed = 1;

  // stabilization stopping rule: stop when the relative change of the
  // smoothed (window-averaged) losses falls below stop_tol over a full
  // window; 0 disables and the iteration cap is the only stop
  double stop_tol = 0.0;
  int stop_window = 100;

  // ablation switches
  bool soft_penalty = false;      // projection off; quadratic penalty instead
  double penalty_weight = 10.0;
  bool enforce_floor = true;      // wealth floor
  bool use_value_loss = true;
  bool use_adjoint_loss = true;
  bool actor_second_order = true;
  SecondOrderSource second_order_source = SecondOrderSource::costate;

  int chunk = 8192;  // rows per tape when chunking large batches

  void validate() const;
};

struct NetworkTriple {
  Mlp value;    // (t, W, Y) -> v, exp transform keeps (1-R) v > 0
  Mlp costate;  // (t, W, Y) -> (p_W, p_Y)
  Mlp policy;   // (t, W, Y) -> (raw pi (d), raw consumption ratio)
};

// specs + normalization derived from the problem; nets seeded from `seed`
NetworkTriple make_networks(const Problem& prob, const TrainConfig& tc);

// raw controls for one time node from the policy net (c = ratio * W)
RawControls policy_controls(const Mlp& policy, double t, const Vec& W, const Vec& Y);

// simulate a batch under the current policy nets
PathBatch rollout(const Problem& prob, const Mlp& policy, int M, int N,
                  uint64_t seed, bool project, bool enforce_floor);

// ------------------------------------------------------------- losses ----

// squared one-step recursion residuals, terminal value replaced by the
// bequest; accumulates d loss / d theta into the value net when accumulate
struct ValueLossResult {
  double loss = 0.0;
  long domain_violations = 0;
};
ValueLossResult value_loss(const PathBatch& batch, Mlp& value, const EZParams& ez,
                           bool accumulate, int chunk = 8192);

// mean squared mismatch between the costate net and its detached target over
// all (path, step) nodes: grad_x of the value net at interior nodes, the
// exact bequest gradient (kappa_b W^-R, 0) at t_N — the value net is never
// trained at t_N (the recursion uses the bequest there), so its gradient at
// the terminal carries no information while the bequest's is closed form
double adjoint_loss(const PathBatch& batch, Mlp& costate, Mlp& value,
                    const EZParams& ez, bool accumulate, int chunk = 8192);

// drift-only running Hamiltonian H = f(c, v) + p_W b_W + p_Y b_Y
double hamiltonian(double W, double Y, double v, const Vec& p, const Vec& pi,
                   double c, const MarketParams& mkt, const EZParams& ez);

// closed-form control gradients of the drift-only Hamiltonian:
//   d H / d pi = p_W W (mu(Y) - r 1),   d H / d c = f_c(c, v) - p_W
void hamiltonian_grad_u(double W, double Y, double v, const Vec& p,
                        const Vec& pi, double c, const MarketParams& mkt,
                        const EZParams& ez, Vec* dpi, double* dc);

// batch actor objective J = mean H - beta_reg * mean |raw|^2 (reporting)
double actor_objective(const PathBatch& batch, const Mlp& value,
                       const Mlp& costate, const Problem& prob,
                       double beta_reg);

// one Adam ascent step on the policy; returns the J value it saw
double actor_step(const PathBatch& batch, NetworkTriple& nets, Adam& policy_adam,
                  const Problem& prob, const TrainConfig& tc);

// ---------------------------------------------------------------- train ----

struct LogRow {
  int iter = 0;
  double value_loss = 0.0;
  double adjoint_loss = 0.0;
  double actor_objective = 0.0;
  double floor_rate = 0.0;
  double cons_floor_rate = 0.0;
  double cons_cap_rate = 0.0;
  double portfolio_active_rate = 0.0;
  double raw_projection_distance = 0.0;   // mean relative |u_raw - P(u_raw)|
  double executed_infeasibility = 0.0;    // mean distance of executed controls
};

struct TrainResult {
  NetworkTriple nets;
  std::vector<LogRow> log;
  int iterations_run = 0;
  bool stopped_early = false;
  double wall_seconds = 0.0;
};

TrainResult train(const Problem& prob, const TrainConfig& tc,
                  const NetworkTriple* warm_start = nullptr,
                  const std::function<void(const LogRow&, const NetworkTriple&)>&
                      on_iter = {});

// ablation variants of a base config (names: full, soft-penalty, no-floor,
// value-only, adjoint-only)
TrainConfig ablation_variant(const TrainConfig& base, const std::string& name);
std::vector<std::string> ablation_names();

}  // namespace pgdpo

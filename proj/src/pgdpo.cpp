#include "pgdpo/pgdpo.hpp"

#include <algorithm>
#include <chrono>

namespace pgdpo {

void Problem::validate() const {
  mkt.validate();
  ez.validate();
  pc.validate();
}

void TrainConfig::validate() const {
  require(steps >= 1, "training: steps must be >= 1");
  require(batch >= 1, "training: batch must be >= 1");
  require(iterations >= 1, "training: iterations must be >= 1");
  require(lr_value > 0.0 && lr_costate > 0.0 && lr_policy > 0.0,
          "training: learning rates must be > 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "training: adam_beta1 in [0,1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "training: adam_beta2 in [0,1)");
  require(adam_eps > 0.0, "training: adam_eps must be > 0");
  require(lambda_adj >= 0.0, "training: lambda_adj must be >= 0");
  require(beta_reg >= 0.0, "training: beta_reg must be >= 0");
  require(hidden_layers >= 1 && width >= 1, "training: network topology must be >= 1");
  require(stop_tol >= 0.0, "training: stop_tol must be >= 0");
  require(stop_window >= 1, "training: stop_window must be >= 1");
  require(penalty_weight >= 0.0, "training: penalty_weight must be >= 0");
  require(chunk >= 1, "training: chunk must be >= 1");
  require(use_value_loss || use_adjoint_loss,
          "training: at least one critic loss must be enabled");
}

NetworkTriple make_networks(const Problem& prob, const TrainConfig& tc) {
  prob.validate();
  tc.validate();
  const MarketParams& m = prob.mkt;
  Vec off(3), sc(3);
  off << 0.0, m.w_min, m.y_bar;
  sc << m.T, std::max(m.w0 - m.w_min, 1e-12),
      std::max(3.0 * m.y_stationary_sd(), 1e-12);
  auto spec = [&](int out, OutputTransform tr) {
    NetworkSpec s;
    s.in_dim = 3;
    s.out_dim = out;
    s.hidden_layers = tc.hidden_layers;
    s.width = tc.width;
    s.act = tc.activation;
    s.transform = tr;
    s.norm_offset = off;
    s.norm_scale = sc;
    return s;
  };
  const OutputTransform vt =
      prob.ez.R > 1.0 ? OutputTransform::neg_exp : OutputTransform::pos_exp;
  NetworkTriple nets;
  nets.value = Mlp(spec(1, vt), RngStream::derive(tc.seed, 101));
  nets.costate = Mlp(spec(2, OutputTransform::identity), RngStream::derive(tc.seed, 102));
  nets.policy = Mlp(spec(m.d + 1, OutputTransform::raw_control),
                    RngStream::derive(tc.seed, 103));
  return nets;
}

RawControls policy_controls(const Mlp& policy, double t, const Vec& W, const Vec& Y) {
  const int M = static_cast<int>(W.size());
  Mat X(M, 3);
  X.col(0).setConstant(t);
  X.col(1) = W;
  X.col(2) = Y;
  Mat out = policy.forward(X);
  const int d = static_cast<int>(out.cols()) - 1;
  RawControls rc;
  rc.pi = out.leftCols(d);
  rc.c = out.col(d).cwiseProduct(W);  // ratio head -> consumption level
  return rc;
}

PathBatch rollout(const Problem& prob, const Mlp& policy, int M, int N,
                  uint64_t seed, bool project, bool enforce_floor) {
  SimOptions opts;
  opts.constraint = prob.pc;
  opts.c_bar = prob.ez.c_bar;
  opts.project = project;
  opts.enforce_floor = enforce_floor;
  PolicyFn fn = [&policy](double t, const Vec& W, const Vec& Y) {
    return policy_controls(policy, t, W, Y);
  };
  return simulate_batch(prob.mkt, fn, M, N, seed, opts);
}

namespace {

// (t, W, Y) rows for paths [mb, me) and nodes [k0, k1); row index
// (m - mb) * (k1 - k0) + (k - k0)
Mat states_block(const PathBatch& b, int mb, int me, int k0, int k1) {
  const int K = k1 - k0;
  Mat X(static_cast<long>(me - mb) * K, 3);
  for (int m = mb; m < me; ++m)
    for (int k = k0; k < k1; ++k) {
      const long r = static_cast<long>(m - mb) * K + (k - k0);
      X(r, 0) = b.t[k];
      X(r, 1) = b.W(m, k);
      X(r, 2) = b.Y(m, k);
    }
  return X;
}

}  // namespace

ValueLossResult value_loss(const PathBatch& b, Mlp& value, const EZParams& ez,
                           bool accumulate, int chunk) {
  const int M = b.M, N = b.N;
  require(M > 0 && N > 0, "value_loss: empty batch");
  const double sgn = 1.0 - ez.R;  // aggregator domain: sgn * v > 0
  const double inv_mn = 1.0 / (static_cast<double>(M) * N);
  const int ppc = std::max(1, chunk / N);
  ValueLossResult res;
  for (int mb = 0; mb < M; mb += ppc) {
    const int me = std::min(M, mb + ppc);
    const int rows = (me - mb) * N;
    Mat Xc = states_block(b, mb, me, 0, N);
    Mat Xn = states_block(b, mb, me, 1, N + 1);
    Mat mask_nt = Mat::Ones(rows, 1);  // drops the net's V at t_N
    Mat beq = Mat::Zero(rows, 1);
    Vec clev(rows);
    for (int m = mb; m < me; ++m)
      for (int k = 0; k < N; ++k) {
        const int r = (m - mb) * N + k;
        clev[r] = b.c(m, k);
        if (k + 1 == N) {
          mask_nt(r, 0) = 0.0;
          beq(r, 0) = bequest_utility(b.W(m, N), ez);
        }
      }
    require(beq.allFinite(), "value_loss: non-finite bequest");

    // The next-node value is a frozen regression target, exactly like the
    // bequest at t_N. Differentiating through it would reward shrinking
    // grad_x V: for the true value process the residual is the martingale
    // increment -Z dB with |Z|^2 dt proportional to |grad_x V|^2, so the
    // two-sided squared loss is minimized by flattening V across the
    // transition noise rather than by satisfying the recursion.
    const Mat Vnext_frozen = value.forward(Xn);
    Tape tape;
    Tape::Id Vc = value.forward(tape, Xc);
    if (!tape.val(Vc).allFinite() || !Vnext_frozen.allFinite())
      throw DivergenceError("value loss: non-finite value net output");

    // rows outside the aggregator domain are excluded (zero weight); the exp
    // output transform makes this impossible for v, so violations can only
    // come from hand-built batches with c <= 0
    Mat valid = Mat::Ones(rows, 1);
    long viol = 0;
    const Mat& vc = tape.val(Vc);
    for (int r = 0; r < rows; ++r)
      if (!(clev[r] > 0.0) || !(sgn * vc(r, 0) > 0.0)) {
        valid(r, 0) = 0.0;
        ++viol;
      }
    res.domain_violations += viol;
    Tape::Id Vcur = Vc;
    Vec csafe = clev;
    if (viol > 0) {
      const double fb = ez.R > 1.0 ? -1.0 : 1.0;  // in-domain dummy value
      Mat fbv = ((1.0 - valid.array()) * fb).matrix();
      Vcur = tape.add(tape.cmul(Vc, valid), tape.constant(fbv));
      for (int r = 0; r < rows; ++r)
        if (valid(r, 0) == 0.0) csafe[r] = 1.0;
    }

    Tape::Id f;
    if (ez.crra_limit()) {
      Mat u(rows, 1);
      for (int r = 0; r < rows; ++r) u(r, 0) = crra_utility(csafe[r], ez.R);
      f = tape.axpb(tape.sub(tape.constant(u), Vcur), ez.delta, 0.0);
    } else {
      const double S = ez.S();
      Mat cpow(rows, 1);
      for (int r = 0; r < rows; ++r) cpow(r, 0) = std::pow(csafe[r], 1.0 - S);
      Tape::Id A = tape.axpb(Vcur, 1.0 - ez.R, 0.0);
      Tape::Id Ap = tape.pow(A, (S - 1.0) / (1.0 - ez.R));
      Tape::Id T2 = tape.cmul(tape.mul(Vcur, Ap), cpow);
      f = tape.axpb(tape.sub(T2, Vcur), ez.delta * ez.theta(), 0.0);
    }
    Tape::Id vnext = tape.constant(
        (Vnext_frozen.array() * mask_nt.array() + beq.array()).matrix());
    Tape::Id resid = tape.sub(tape.sub(Vc, vnext), tape.axpb(f, b.dt, 0.0));
    if (viol > 0) resid = tape.cmul(resid, valid);
    Tape::Id loss = tape.axpb(tape.sum_all(tape.square(resid)), inv_mn, 0.0);
    const double lval = tape.val(loss)(0, 0);
    if (!std::isfinite(lval)) throw DivergenceError("value loss: non-finite");
    res.loss += lval;
    if (accumulate) tape.backward(loss);
  }
  if (res.domain_violations >= static_cast<long>(M) * N)
    throw DivergenceError("value loss: every sample outside the aggregator domain");
  return res;
}

double adjoint_loss(const PathBatch& b, Mlp& costate, Mlp& value,
                    const EZParams& ez, bool accumulate, int chunk) {
  const int M = b.M, N = b.N;
  require(M > 0 && N > 0, "adjoint_loss: empty batch");
  // mean over all M (N+1) sampled nodes (t_N included: the costate must
  // match the bequest gradient there too)
  const double inv_mn = 1.0 / (static_cast<double>(M) * (N + 1));
  const int ppc = std::max(1, chunk / (N + 1));
  double total = 0.0;
  for (int mb = 0; mb < M; mb += ppc) {
    const int me = std::min(M, mb + ppc);
    Mat X = states_block(b, mb, me, 0, N + 1);
    Mat G = value.input_gradient(X);  // detached target
    Mat target = G.rightCols(2);
    // terminal rows: the value of record at t_N is the bequest, so the
    // costate target there is its exact gradient, not the untrained net's
    for (int m = mb; m < me; ++m) {
      const long r = static_cast<long>(m - mb) * (N + 1) + N;
      target(r, 0) = bequest_marginal(b.W(m, N), ez);
      target(r, 1) = 0.0;
    }
    if (!target.allFinite())
      throw DivergenceError("adjoint loss: non-finite value gradient");
    Tape tape;
    Tape::Id P = costate.forward(tape, X);
    Tape::Id diff = tape.sub(P, tape.constant(target));
    Tape::Id loss = tape.axpb(tape.sum_all(tape.square(diff)), inv_mn, 0.0);
    const double l = tape.val(loss)(0, 0);
    if (!std::isfinite(l)) throw DivergenceError("adjoint loss: non-finite");
    total += l;
    if (accumulate) tape.backward(loss);
  }
  return total;
}

double hamiltonian(double W, double Y, double v, const Vec& p, const Vec& pi,
                   double c, const MarketParams& mkt, const EZParams& ez) {
  const Vec excess = (mkt.drift(Y).array() - mkt.r).matrix();
  const double bW = W * (mkt.r + pi.dot(excess)) - c;
  const double bY = mkt.kappa_y * (mkt.y_bar - Y);
  return ez_aggregator(c, v, ez) + p[0] * bW + p[1] * bY;
}

void hamiltonian_grad_u(double W, double Y, double v, const Vec& p,
                        const Vec& pi, double c, const MarketParams& mkt,
                        const EZParams& ez, Vec* dpi, double* dc) {
  (void)pi;  // the drift is linear in pi
  if (dpi) *dpi = p[0] * W * (mkt.drift(Y).array() - mkt.r).matrix();
  if (dc) *dc = ez_aggregator_dc(c, v, ez) - p[0];
}

double actor_objective(const PathBatch& b, const Mlp& value, const Mlp& costate,
                       const Problem& prob, double beta_reg) {
  const int M = b.M, N = b.N;
  Mat X = states_block(b, 0, M, 0, N);
  Mat V = value.forward(X);
  Mat P = costate.forward(X);
  double sumH = 0.0, sumReg = 0.0;
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < N; ++k) {
      const long r = static_cast<long>(m) * N + k;
      sumH += hamiltonian(b.W(m, k), b.Y(m, k), V(r, 0), P.row(r).transpose(),
                          b.pi[k].row(m).transpose(), b.c(m, k), prob.mkt, prob.ez);
      if (beta_reg > 0.0) {
        const double ratio = b.c_raw(m, k) / b.W(m, k);
        sumReg += b.pi_raw[k].row(m).squaredNorm() + ratio * ratio;
      }
    }
  const double inv = 1.0 / (static_cast<double>(M) * N);
  return sumH * inv - beta_reg * sumReg * inv;
}

double actor_step(const PathBatch& b, NetworkTriple& nets, Adam& policy_adam,
                  const Problem& prob, const TrainConfig& tc) {
  const MarketParams& mkt = prob.mkt;
  const EZParams& ez = prob.ez;
  const int M = b.M, N = b.N, d = b.d;
  const double inv_mn = 1.0 / (static_cast<double>(M) * N);
  const Mat S = mkt.covariance();
  const Vec srho = (mkt.sigma.array() * mkt.rho.array()).matrix();
  const bool pnet = tc.use_adjoint_loss;  // otherwise read grad_x V directly
  const SecondOrderSource so =
      pnet ? tc.second_order_source : SecondOrderSource::value;
  const double hW = 1e-3 * nets.value.spec().norm_scale[1];
  const double hY = 1e-3 * nets.value.spec().norm_scale[2];

  nets.policy.zero_grad();
  double sumH = 0.0, sumReg = 0.0;
  const int ppc = std::max(1, tc.chunk / N);
  for (int mb = 0; mb < M; mb += ppc) {
    const int me = std::min(M, mb + ppc);
    const int rows = (me - mb) * N;
    Mat X = states_block(b, mb, me, 0, N);
    Mat V = nets.value.forward(X);
    Mat P = pnet ? nets.costate.forward(X)
                 : Mat(nets.value.input_gradient(X).rightCols(2));
    if (!V.allFinite() || !P.allFinite())
      throw DivergenceError("actor step: non-finite critic output");

    Mat qWW, qWY;  // second derivatives of V in W via the chosen source
    if (tc.actor_second_order) {
      const int cW = so == SecondOrderSource::costate ? 0 : 1;
      auto grads = [&](const Mat& Xs) {
        return so == SecondOrderSource::costate
                   ? Mat(nets.costate.forward(Xs))
                   : Mat(nets.value.input_gradient(Xs));
      };
      Mat Xp = X, Xm = X;
      Xp.col(1).array() += hW;
      Xm.col(1).array() -= hW;
      qWW = (grads(Xp).col(cW) - grads(Xm).col(cW)) / (2.0 * hW);
      Xp = X;
      Xm = X;
      Xp.col(2).array() += hY;
      Xm.col(2).array() -= hY;
      qWY = (grads(Xp).col(cW) - grads(Xm).col(cW)) / (2.0 * hY);
    }

    Tape tape;
    Tape::Id out = nets.policy.forward(tape, X);
    const Mat& raw = tape.val(out);
    Mat seed = Mat::Zero(rows, d + 1);
    for (int r = 0; r < rows; ++r) {
      const double W = X(r, 1), Y = X(r, 2);
      const Vec pi_raw = raw.row(r).head(d).transpose();
      const double ratio = raw(r, d);
      const double craw = ratio * W;
      const double pW = P(r, 0);
      const Vec excess = (mkt.drift(Y).array() - mkt.r).matrix();
      const PortfolioProjection pp = project_portfolio(pi_raw, prob.pc);
      const ConsumptionProjection cp = project_consumption(craw, W, ez.c_bar);
      Vec pi_exec;
      double c_exec;
      if (tc.soft_penalty) {
        pi_exec = pi_raw;
        c_exec = std::max(craw, kConsumptionFloorFrac * W);
      } else {
        pi_exec = pp.pi;
        c_exec = cp.c;
      }

      Vec api = pW * W * excess;
      if (tc.actor_second_order)
        api += W * W * qWW(r, 0) * (S * pi_exec) + W * mkt.xi * qWY(r, 0) * srho;
      const double ac = ez_aggregator_dc(c_exec, V(r, 0), ez) - pW;

      Vec Dpi;
      double Dratio;
      if (tc.soft_penalty) {
        Dpi = api - 2.0 * tc.penalty_weight * (pi_raw - pp.pi);
        const double floor_c = kConsumptionFloorFrac * W;
        const double gate = craw > floor_c ? 1.0 : (ac > 0.0 ? 1.0 : 0.0);
        const double clipped = std::min(std::max(craw, floor_c), ez.c_bar * W);
        Dratio = (ac * gate - 2.0 * tc.penalty_weight * (craw - clipped)) * W;
      } else {
        Dpi = pp.jac.apply(api);
        // a coordinate clamped at zero against a slack cap re-enters as soon
        // as the ascent direction points inward
        if (prob.pc.mode == PortfolioMode::capped && !pp.jac.sum_active)
          for (int i = 0; i < d; ++i)
            if (!pp.jac.free[i] && api[i] > 0.0) Dpi[i] = api[i];
        Dratio = ac * cp.gate(ac) * W;
      }

      sumH += hamiltonian(W, Y, V(r, 0), P.row(r).transpose(), pi_exec, c_exec,
                          mkt, ez);
      if (tc.beta_reg > 0.0) {
        sumReg += pi_raw.squaredNorm() + ratio * ratio;
        Dpi -= 2.0 * tc.beta_reg * pi_raw;
        Dratio -= 2.0 * tc.beta_reg * ratio;
      }
      seed.row(r).head(d) = (-inv_mn) * Dpi.transpose();
      seed(r, d) = (-inv_mn) * Dratio;  // Adam minimizes; ascend J
    }
    require(seed.allFinite(), "actor step: non-finite ascent direction");
    tape.backward_seed(out, seed);
  }
  policy_adam.step();
  const double J = sumH * inv_mn - tc.beta_reg * sumReg * inv_mn;
  if (!std::isfinite(J)) throw DivergenceError("actor objective non-finite");
  return J;
}

TrainResult train(const Problem& prob, const TrainConfig& tc,
                  const NetworkTriple* warm_start,
                  const std::function<void(const LogRow&, const NetworkTriple&)>&
                      on_iter) {
  prob.validate();
  tc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  if (warm_start) {
    res.nets = *warm_start;
    require(res.nets.policy.spec().out_dim == prob.mkt.d + 1,
            "warm start: policy head width does not match the market");
  } else {
    res.nets = make_networks(prob, tc);
  }
  Adam value_adam(res.nets.value.param_values(), res.nets.value.param_grads(),
                  tc.lr_value, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
  Adam costate_adam(res.nets.costate.param_values(),
                    res.nets.costate.param_grads(), tc.lr_costate,
                    tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
  Adam policy_adam(res.nets.policy.param_values(), res.nets.policy.param_grads(),
                   tc.lr_policy, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);

  const double inv_mn = 1.0 / (static_cast<double>(tc.batch) * tc.steps);
  std::vector<double> smooth;
  res.log.reserve(tc.iterations);
  for (int iter = 0; iter < tc.iterations; ++iter) {
    const uint64_t bseed =
        RngStream::derive(tc.seed, 0xBA7C4, static_cast<uint64_t>(iter));
    PathBatch batch = rollout(prob, res.nets.policy, tc.batch, tc.steps, bseed,
                              /*project=*/!tc.soft_penalty, tc.enforce_floor);

    res.nets.value.zero_grad();
    res.nets.costate.zero_grad();
    const ValueLossResult vl =
        value_loss(batch, res.nets.value, prob.ez, tc.use_value_loss, tc.chunk);
    const double al = adjoint_loss(batch, res.nets.costate, res.nets.value,
                                   prob.ez, tc.use_adjoint_loss, tc.chunk);
    if (tc.use_value_loss) value_adam.step();
    if (tc.use_adjoint_loss) {
      if (tc.lambda_adj != 1.0)
        for (Mat* g : res.nets.costate.param_grads()) *g *= tc.lambda_adj;
      costate_adam.step();
    }
    const double J = actor_step(batch, res.nets, policy_adam, prob, tc);

    LogRow row;
    row.iter = iter;
    row.value_loss = vl.loss;
    row.adjoint_loss = al;
    row.actor_objective = J;
    row.floor_rate = batch.flag_rate(kFlagFloorHit);
    row.cons_floor_rate = batch.flag_rate(kFlagConsFloor);
    row.cons_cap_rate = batch.flag_rate(kFlagConsCap);
    row.portfolio_active_rate = batch.flag_rate(kFlagPortfolioActive);
    double rawd = 0.0, execd = 0.0;
    for (int k = 0; k < batch.N; ++k)
      for (int m = 0; m < batch.M; ++m) {
        const double W = batch.W(m, k);
        const Vec praw = batch.pi_raw[k].row(m).transpose();
        const double craw = batch.c_raw(m, k);
        const double dist =
            infeasibility_distance(praw, craw, W, prob.pc, prob.ez.c_bar);
        const double scale = std::sqrt(praw.squaredNorm() + craw * craw) + 1e-8;
        rawd += dist / scale;
        execd += infeasibility_distance(batch.pi[k].row(m).transpose(),
                                        batch.c(m, k), W, prob.pc, prob.ez.c_bar);
      }
    row.raw_projection_distance = rawd * inv_mn;
    row.executed_infeasibility = execd * inv_mn;
    res.log.push_back(row);
    if (on_iter) on_iter(row, res.nets);
    res.iterations_run = iter + 1;

    if (tc.stop_tol > 0.0) {
      smooth.push_back(vl.loss + al);
      const int w = tc.stop_window;
      if (static_cast<int>(smooth.size()) >= 2 * w) {
        double recent = 0.0, prev = 0.0;
        for (int i = 0; i < w; ++i) {
          recent += smooth[smooth.size() - 1 - i];
          prev += smooth[smooth.size() - 1 - w - i];
        }
        recent /= w;
        prev /= w;
        if (std::abs(recent - prev) <= tc.stop_tol * std::max(std::abs(prev), 1e-12)) {
          res.stopped_early = true;
          break;
        }
      }
    }
  }
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

TrainConfig ablation_variant(const TrainConfig& base, const std::string& name) {
  TrainConfig tc = base;
  if (name == "full") return tc;
  if (name == "soft-penalty") {
    tc.soft_penalty = true;
    return tc;
  }
  if (name == "no-floor") {
    tc.enforce_floor = false;
    return tc;
  }
  if (name == "value-only") {
    tc.use_adjoint_loss = false;
    return tc;
  }
  if (name == "adjoint-only") {
    tc.use_value_loss = false;
    return tc;
  }
  throw ConfigError("unknown ablation variant: " + name);
}

std::vector<std::string> ablation_names() {
  return {"full", "soft-penalty", "no-floor", "value-only", "adjoint-only"};
}

}  // namespace pgdpo

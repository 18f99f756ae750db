#include "pgdpo/market.hpp"

namespace pgdpo {

void MarketParams::validate() const {
  require(d >= 1, "market: d must be >= 1");
  require(T > 0.0, "market: T must be > 0");
  require(kappa_y > 0.0, "market: kappa_y must be > 0");
  require(xi >= 0.0, "market: xi must be >= 0");
  const auto sz = static_cast<Eigen::Index>(d);
  require(mu_bar.size() == sz && sigma.size() == sz && rho.size() == sz &&
              beta_lrr.size() == sz,
          "market: mu_bar/sigma/rho/beta_lrr must all have length d");
  for (int i = 0; i < d; ++i) {
    require(sigma[i] > 0.0, "market: sigma must be > 0");
    require(std::abs(rho[i]) < 1.0, "market: need |rho| < 1");
  }
  require(w_min > 0.0, "market: w_min must be > 0");
  require(w_max > w_min, "market: w_max must exceed w_min");
  require(0.9 * w0 > w_min, "market: initial wealth band must sit above the floor");
}

Vec MarketParams::drift(double y) const {
  return mu_bar + beta_lrr * (y - y_bar);
}

Mat MarketParams::vol() const {
  Mat S = Mat::Zero(d, d + 1);
  for (int i = 0; i < d; ++i) {
    S(i, 0) = sigma[i] * rho[i];
    S(i, i + 1) = sigma[i] * std::sqrt(1.0 - rho[i] * rho[i]);
  }
  return S;
}

Mat MarketParams::covariance() const {
  const Mat S = vol();
  return S * S.transpose();
}

MarketParams MarketParams::baseline() {
  MarketParams m;
  m.d = 5;
  m.mu_bar = Vec(5);
  m.mu_bar << 0.06, 0.08, 0.10, 0.12, 0.14;
  m.sigma = Vec(5);
  m.sigma << 0.15, 0.1875, 0.225, 0.2625, 0.30;
  m.rho = Vec(5);
  m.rho << 0.60, 0.50, 0.40, 0.30, 0.20;
  m.beta_lrr = Vec(5);
  m.beta_lrr << 0.90, 0.9375, 0.90, 0.7875, 0.60;
  return m;
}

MarketParams MarketParams::single_asset(double mu, double sigma_, double rho_,
                                        double beta) {
  MarketParams m;
  m.d = 1;
  m.mu_bar = Vec::Constant(1, mu);
  m.sigma = Vec::Constant(1, sigma_);
  m.rho = Vec::Constant(1, rho_);
  m.beta_lrr = Vec::Constant(1, beta);
  return m;
}

void step_euler(const MarketParams& mkt, double dt, double& W, double& Y,
                const Vec& pi, double c, const Vec& dB, uint8_t* flags) {
  const Vec mu = mkt.drift(Y);
  const Mat S = mkt.vol();
  const double excess = pi.dot(mu - Vec::Constant(mkt.d, mkt.r));
  const double noise = pi.dot(S * dB);
  double Wn = W * (1.0 + mkt.r * dt + excess * dt + noise) - c * dt;
  if (Wn < mkt.w_min) {
    Wn = mkt.w_min;
    if (flags) *flags |= kFlagFloorHit;
  }
  if (!std::isfinite(Wn)) throw DivergenceError("step_euler: non-finite wealth");
  W = Wn;
  Y = Y + mkt.kappa_y * (mkt.y_bar - Y) * dt + mkt.xi * dB[0];
  if (!std::isfinite(Y)) throw DivergenceError("step_euler: non-finite factor");
}

void sample_initial_state(const MarketParams& mkt, RngStream& rng, double& W0,
                          double& Y0) {
  W0 = rng.uniform(0.9 * mkt.w0, 1.1 * mkt.w0);
  Y0 = rng.truncated_normal(mkt.y_bar, mkt.y_stationary_sd(), 3.0);
}

double PathBatch::flag_rate(uint8_t mask) const {
  if (M == 0 || N == 0) return 0.0;
  long hits = 0;
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < N; ++k)
      if (flags(m, k) & mask) ++hits;
  return static_cast<double>(hits) / (static_cast<double>(M) * N);
}

PathBatch simulate_batch(const MarketParams& mkt, const PolicyFn& policy,
                         int M, int N, uint64_t seed, const SimOptions& opts) {
  mkt.validate();
  opts.constraint.validate();
  require(M >= 1 && N >= 1, "simulate_batch: M and N must be >= 1");

  // no-floor mode keeps a bare positivity guard so utilities stay defined
  MarketParams step_mkt = mkt;
  if (!opts.enforce_floor) step_mkt.w_min = 1e-6;

  PathBatch b;
  b.M = M;
  b.N = N;
  b.d = mkt.d;
  b.dt = mkt.T / N;
  b.t = Vec::LinSpaced(N + 1, 0.0, mkt.T);
  b.W.resize(M, N + 1);
  b.Y.resize(M, N + 1);
  b.pi_raw.assign(N, Mat(M, mkt.d));
  b.pi.assign(N, Mat(M, mkt.d));
  b.c_raw.resize(M, N);
  b.c.resize(M, N);
  b.dB.assign(N, Mat(M, mkt.d + 1));
  b.flags.setZero(M, N);

  std::vector<RngStream> streams;
  streams.reserve(M);
  for (int m = 0; m < M; ++m) {
    streams.emplace_back(seed, static_cast<uint64_t>(m));
    double W0, Y0;
    sample_initial_state(mkt, streams.back(), W0, Y0);
    b.W(m, 0) = W0;
    b.Y(m, 0) = Y0;
  }

  const double sq_dt = std::sqrt(b.dt);
  Vec pi_row(mkt.d), dB_row(mkt.d + 1);
  for (int k = 0; k < N; ++k) {
    const double tk = b.t[k];
    RawControls raw = policy(tk, b.W.col(k), b.Y.col(k));
    require(raw.pi.rows() == M && raw.pi.cols() == mkt.d &&
                raw.c.size() == M,
            "simulate_batch: policy returned wrong shapes");
    for (int m = 0; m < M; ++m) {
      const double Wk = b.W(m, k);
      pi_row = raw.pi.row(m).transpose();
      ProjectedControl pc = project_control(pi_row, raw.c[m], Wk,
                                            opts.constraint, opts.c_bar);
      b.flags(m, k) |= pc.flags;
      Vec pi_exec;
      double c_exec;
      if (opts.project) {
        pi_exec = pc.pi;
        c_exec = pc.c;
      } else {
        // soft-penalty mode: execute raw controls, aggregator-domain floor only
        pi_exec = pi_row;
        c_exec = std::max(raw.c[m], kConsumptionFloorFrac * Wk);
      }
      b.pi_raw[k].row(m) = pi_row.transpose();
      b.pi[k].row(m) = pi_exec.transpose();
      b.c_raw(m, k) = raw.c[m];
      b.c(m, k) = c_exec;
      for (int j = 0; j <= mkt.d; ++j) dB_row[j] = sq_dt * streams[m].normal();
      b.dB[k].row(m) = dB_row.transpose();
      double W = Wk, Y = b.Y(m, k);
      uint8_t fl = 0;
      step_euler(step_mkt, b.dt, W, Y, pi_exec, c_exec, dB_row, &fl);
      b.flags(m, k) |= fl;
      b.W(m, k + 1) = W;
      b.Y(m, k + 1) = Y;
    }
  }
  return b;
}

ProjectionDiagnostics diagnostics(const PathBatch& batch) {
  require(batch.M > 0 && batch.N > 0, "diagnostics: empty batch");
  ProjectionDiagnostics dg;
  dg.portfolio_binding_rate = batch.flag_rate(kFlagPortfolioActive);
  dg.consumption_binding_rate =
      batch.flag_rate(kFlagConsFloor | kFlagConsCap);
  dg.floor_hit_rate = batch.flag_rate(kFlagFloorHit);
  double acc = 0.0;
  for (int k = 0; k < batch.N; ++k)
    for (int m = 0; m < batch.M; ++m) {
      const double diff =
          (batch.pi[k].row(m) - batch.pi_raw[k].row(m)).norm();
      acc += diff / (batch.pi_raw[k].row(m).norm() + 1e-8);
    }
  dg.mean_relative_projection_distance =
      acc / (static_cast<double>(batch.M) * batch.N);
  return dg;
}

double ou_mean(const MarketParams& mkt, double y0, double tau) {
  return mkt.y_bar + (y0 - mkt.y_bar) * std::exp(-mkt.kappa_y * tau);
}

double ou_var(const MarketParams& mkt, double tau) {
  return mkt.xi * mkt.xi * (1.0 - std::exp(-2.0 * mkt.kappa_y * tau)) /
         (2.0 * mkt.kappa_y);
}

}  // namespace pgdpo

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pgdpo/analytic.hpp"
#include "oracles/fd_hjb.hpp"

#include <vector>

using namespace pgdpo;

namespace {

MertonParams validation_merton() {
  MertonParams mp;  // defaults are the single-asset validation block
  return mp;
}

// the consumption-fraction formula transcribed independently
double fraction_ref(const MertonParams& mp, double t) {
  const double nu = mp.nu();
  const double tau = mp.T - t;
  const double gT = std::pow(mp.kappa, 1.0 / mp.R);
  if (std::abs(nu) < 1e-12) return 1.0 / (tau + gT);
  return nu / (1.0 + (nu * gT - 1.0) * std::exp(-nu * tau));
}

// equality-constrained stationary point on a support set:
// solve [R S_FF, 1; 1^T, 0] [pi_F; theta] = [alpha_F; budget]
bool solve_support(const Mat& S, const Vec& alpha, double R,
                   const std::vector<int>& F, double budget, Vec* pi,
                   double* theta) {
  const int nf = static_cast<int>(F.size());
  Mat K(nf + 1, nf + 1);
  Vec rhs(nf + 1);
  for (int a = 0; a < nf; ++a) {
    for (int b = 0; b < nf; ++b) K(a, b) = R * S(F[a], F[b]);
    K(a, nf) = 1.0;
    K(nf, a) = 1.0;
    rhs[a] = alpha[F[a]];
  }
  K(nf, nf) = 0.0;
  rhs[nf] = budget;
  Vec sol = K.fullPivLu().solve(rhs);
  if (!sol.allFinite()) return false;
  pi->setZero();
  for (int a = 0; a < nf; ++a) (*pi)[F[a]] = sol[a];
  *theta = sol[nf];
  return true;
}

// Exhaustive KKT oracle for max alpha^T pi - (R/2) pi^T S pi over the
// admissible portfolio sets. Small d only.
Vec oracle_myopic(const Mat& S, const Vec& alpha, double R,
                  const PortfolioConstraint& pc) {
  const int d = static_cast<int>(alpha.size());
  const double tol = 1e-9;
  double best = -std::numeric_limits<double>::infinity();
  Vec best_pi = Vec::Zero(d);
  auto objective = [&](const Vec& p) {
    return alpha.dot(p) - 0.5 * R * p.dot(S * p);
  };
  auto consider = [&](const Vec& p) {
    const double val = objective(p);
    if (val > best) {
      best = val;
      best_pi = p;
    }
  };

  if (pc.mode == PortfolioMode::capped) {
    // interior-of-cap candidates: unconstrained on the support, theta = 0
    for (int mask = 0; mask < (1 << d); ++mask) {
      std::vector<int> F;
      for (int i = 0; i < d; ++i)
        if (mask & (1 << i)) F.push_back(i);
      Vec pi = Vec::Zero(d);
      if (!F.empty()) {
        Mat K(F.size(), F.size());
        Vec rhs(F.size());
        for (size_t a = 0; a < F.size(); ++a) {
          for (size_t b = 0; b < F.size(); ++b)
            K(a, b) = R * S(F[a], F[b]);
          rhs[a] = alpha[F[a]];
        }
        Vec sol = K.fullPivLu().solve(rhs);
        for (size_t a = 0; a < F.size(); ++a) pi[F[a]] = sol[a];
      }
      if ((pi.array() < -tol).any() || pi.sum() > pc.leverage_cap + tol)
        continue;
      Vec grad = alpha - R * (S * pi);
      bool dual_ok = true;
      for (int i = 0; i < d; ++i)
        if (pi[i] <= tol) dual_ok = dual_ok && grad[i] <= tol;
      if (dual_ok) consider(pi);
    }
  }
  // sum-active candidates (the only kind in equality mode)
  const double level =
      pc.mode == PortfolioMode::equality ? pc.budget : pc.leverage_cap;
  for (int mask = 1; mask < (1 << d); ++mask) {
    std::vector<int> F;
    for (int i = 0; i < d; ++i)
      if (mask & (1 << i)) F.push_back(i);
    Vec pi(d);
    double theta;
    if (!solve_support(S, alpha, R, F, level, &pi, &theta)) continue;
    if ((pi.array() < -tol).any()) continue;
    if (pc.mode == PortfolioMode::capped && theta < -tol) continue;
    Vec grad = alpha - R * (S * pi);
    bool dual_ok = true;
    for (int i = 0; i < d; ++i)
      if (pi[i] <= tol) dual_ok = dual_ok && grad[i] <= theta + tol;
    if (dual_ok) consider(pi);
  }
  return best_pi;
}

}  // namespace

TEST_CASE("merton weight worked values") {
  MertonParams mp = validation_merton();
  CHECK(merton_weight(mp) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  mp.mu = mp.r;
  CHECK(merton_weight(mp) == doctest::Approx(0.0));
  mp = validation_merton();
  mp.R = 0.5;
  CHECK(merton_weight(mp) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("consumption fraction matches its closed form everywhere") {
  RngStream rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    MertonParams mp;
    mp.r = rng.uniform(0.0, 0.05);
    mp.mu = mp.r + rng.uniform(0.0, 0.1);
    mp.sigma = rng.uniform(0.1, 0.4);
    mp.R = trial % 2 ? rng.uniform(1.1, 4.0) : rng.uniform(0.3, 0.9);
    mp.delta = rng.uniform(0.01, 0.1);
    mp.T = rng.uniform(0.5, 3.0);
    mp.kappa = trial % 3 == 0 ? 0.0 : rng.uniform(0.2, 2.0);
    // with kappa = 0 the fraction blows up exactly at t = T (g(T) = 0),
    // so only probe the interior there
    const double last = mp.kappa == 0.0 ? 0.95 : 1.0;
    for (double frac : {0.0, 0.3, 0.7, last}) {
      const double t = frac * mp.T;
      CHECK(merton_consumption_fraction(mp, t) ==
            doctest::Approx(fraction_ref(mp, t)).epsilon(1e-10));
    }
  }
  {  // and the guard itself is exercised
    MertonParams mp = validation_merton();
    mp.kappa = 0.0;
    CHECK_THROWS_AS(merton_consumption_fraction(mp, mp.T), ConfigError);
  }
  // kappa = 1 pins the terminal fraction at exactly 1
  MertonParams mp = validation_merton();
  CHECK(merton_consumption_fraction(mp, mp.T) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("nu -> 0 limit is continuous and exact") {
  MertonParams mp = validation_merton();
  mp.R = 0.5;
  mp.delta = 0.09;  // makes nu = 0 exactly for these market numbers
  CHECK(mp.nu() == doctest::Approx(0.0).epsilon(1e-14));
  for (double t : {0.0, 0.75, 1.4}) {
    const double tau = mp.T - t;
    CHECK(merton_consumption_fraction(mp, t) ==
          doctest::Approx(1.0 / (tau + 1.0)).epsilon(1e-9));
    // approaching from both sides agrees with the limit
    MertonParams up = mp, dn = mp;
    up.delta += 1e-9;
    dn.delta -= 1e-9;
    CHECK(merton_consumption_fraction(up, t) ==
          doctest::Approx(merton_consumption_fraction(mp, t)).epsilon(1e-6));
    CHECK(merton_consumption_fraction(dn, t) ==
          doctest::Approx(merton_consumption_fraction(mp, t)).epsilon(1e-6));
  }
}

TEST_CASE("no-bequest no-risk fraction is the annuity rule for any R") {
  for (double R : {0.5, 1.5, 3.0}) {
    MertonParams mp;
    mp.mu = mp.r = 0.03;
    mp.delta = 0.03;
    mp.kappa = 0.0;
    mp.R = R;
    mp.T = 2.0;
    for (double t : {0.0, 1.0, 1.9}) {
      const double tau = mp.T - t;
      const double annuity = mp.delta / (1.0 - std::exp(-mp.delta * tau));
      CHECK(merton_consumption_fraction(mp, t) ==
            doctest::Approx(annuity).epsilon(1e-10));
    }
  }
}

TEST_CASE("value function homotheticity and terminal condition") {
  MertonParams mp = validation_merton();
  for (double t : {0.0, 0.5, 1.2}) {
    for (double W : {0.3, 1.0, 2.5}) {
      CHECK(merton_value(mp, t, 2.0 * W) ==
            doctest::Approx(std::pow(2.0, 1.0 - mp.R) * merton_value(mp, t, W))
                .epsilon(1e-12));
    }
  }
  for (double W : {0.5, 1.0, 4.0})
    CHECK(merton_value(mp, mp.T, W) ==
          doctest::Approx(std::exp(-mp.delta * mp.T) * mp.kappa *
                          std::pow(W, 1.0 - mp.R) / (1.0 - mp.R))
              .epsilon(1e-12));
}

TEST_CASE("runtime self check accepts the shipped formulas") {
  CHECK_NOTHROW(merton_self_check(validation_merton()));
  MertonParams nk = validation_merton();
  nk.kappa = 0.0;
  CHECK_NOTHROW(merton_self_check(nk));
  MertonParams lo = validation_merton();
  lo.R = 0.5;
  lo.delta = 0.09;  // nu = 0 branch
  CHECK_NOTHROW(merton_self_check(lo));
}

TEST_CASE("closed form agrees with an independent finite-difference solve") {
  // stochastic case: the validation parameter block
  oracle::FdHjbParams fp;
  oracle::FdHjbSolution fd = oracle::solve_merton_fd(fp);
  MertonParams mp = validation_merton();
  const double pi_star = merton_weight(mp);
  const double frac0 = merton_consumption_fraction(mp, 0.0);
  for (double w = 0.5; w <= 2.0; w += 0.1) {
    const double v_cf = merton_value(mp, 0.0, w);
    CHECK(std::abs(fd.value_at(w) - v_cf) <= 1e-3 * std::abs(v_cf));
    CHECK(std::abs(fd.cons_at(w) - frac0 * w) <= 5e-3 * frac0 * w);
    CHECK(std::abs(fd.weight_at(w) - pi_star) <= 5e-3 * pi_star);
  }

  // no-risky-investment case (mu = r): pure consumption-timing problem
  oracle::FdHjbParams dp;
  dp.mu = dp.r = 0.03;
  dp.delta = 0.03;
  oracle::FdHjbSolution fdd = oracle::solve_merton_fd(dp);
  MertonParams md = validation_merton();
  md.mu = md.r = 0.03;
  md.delta = 0.03;
  const double fr0 = merton_consumption_fraction(md, 0.0);
  for (double w = 0.5; w <= 2.0; w += 0.25) {
    const double v_cf = merton_value(md, 0.0, w);
    CHECK(std::abs(fdd.value_at(w) - v_cf) <= 1e-3 * std::abs(v_cf));
    CHECK(std::abs(fdd.cons_at(w) - fr0 * w) <= 5e-3 * fr0 * w);
    CHECK(std::abs(fdd.weight_at(w)) <= 5e-3);
  }
}

TEST_CASE("single-asset myopic rule reduces to the merton weight") {
  MertonParams mp = validation_merton();
  MarketParams mkt = MarketParams::single_asset(mp.mu, mp.sigma);
  PortfolioConstraint pc;
  pc.mode = PortfolioMode::capped;
  pc.leverage_cap = 2.0;
  Vec pi = myopic_policy(mkt, mkt.y_bar, mp.R, pc);
  REQUIRE(pi.size() == 1);
  CHECK(pi[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-6));
  CHECK(myopic_unconstrained(mkt, mkt.y_bar, mp.R)[0] ==
        doctest::Approx(4.0 / 3.0).epsilon(1e-12));

  // cap binds when it is below the unconstrained weight
  pc.leverage_cap = 0.9;
  CHECK(myopic_policy(mkt, mkt.y_bar, mp.R, pc)[0] ==
        doctest::Approx(0.9).epsilon(1e-6));

  // mu = r kills the demand
  MarketParams flat = MarketParams::single_asset(mkt.r, mp.sigma);
  pc.leverage_cap = 2.0;
  CHECK(myopic_policy(flat, flat.y_bar, mp.R, pc)[0] ==
        doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("five-asset myopic rule matches the exhaustive KKT oracle") {
  MarketParams mkt = MarketParams::baseline();
  const Mat S = mkt.covariance();
  RngStream rng(17);
  PortfolioConstraint eq;
  eq.mode = PortfolioMode::equality;
  PortfolioConstraint cp;
  cp.mode = PortfolioMode::capped;
  int n_eq_binding = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const double y = rng.uniform(0.1, 0.7);
    const double R = (trial % 3 == 0) ? 0.8 : (trial % 3 == 1 ? 1.5 : 3.0);
    const Vec alpha = mkt.drift(y) - Vec::Constant(5, mkt.r);
    cp.leverage_cap = trial % 2 ? 1.5 : 0.7;

    Vec got = myopic_policy(mkt, y, R, eq);
    Vec want = oracle_myopic(S, alpha, R, eq);
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-4);
    if ((want.array() <= 1e-6).any()) ++n_eq_binding;

    got = myopic_policy(mkt, y, R, cp);
    want = oracle_myopic(S, alpha, R, cp);
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-4);
    CHECK(got.sum() <= cp.leverage_cap + 1e-8);
    CHECK(got.minCoeff() >= -1e-10);
  }
  CHECK(n_eq_binding > 0);  // the draw set actually exercises active sets
}

TEST_CASE("unconstrained myopic matches a rank-one Sherman-Morrison form") {
  MarketParams mkt = MarketParams::baseline();
  // S = D + u u^T with D = diag(sigma_i^2 (1 - rho_i^2)), u_i = sigma_i rho_i
  Vec u(5), Dinv(5);
  for (int i = 0; i < 5; ++i) {
    u[i] = mkt.sigma[i] * mkt.rho[i];
    Dinv[i] = 1.0 / (mkt.sigma[i] * mkt.sigma[i] * (1.0 - mkt.rho[i] * mkt.rho[i]));
  }
  RngStream rng(19);
  for (int trial = 0; trial < 25; ++trial) {
    const double y = rng.uniform(0.0, 0.8);
    const double R = rng.uniform(0.5, 4.0);
    const Vec alpha = mkt.drift(y) - Vec::Constant(5, mkt.r);
    const Vec Da = Dinv.asDiagonal() * alpha;
    const Vec Du = Dinv.asDiagonal() * u;
    const Vec closed = (Da - Du * (u.dot(Da) / (1.0 + u.dot(Du)))) / R;
    CHECK((myopic_unconstrained(mkt, y, R) - closed).cwiseAbs().maxCoeff() <=
          1e-10);
  }
}

TEST_CASE("parameter validation") {
  MertonParams mp = validation_merton();
  CHECK_NOTHROW(mp.validate());
  mp.R = 1.0;
  CHECK_THROWS_AS(mp.validate(), ConfigError);
  mp = validation_merton();
  mp.sigma = 0.0;
  CHECK_THROWS_AS(mp.validate(), ConfigError);
  mp = validation_merton();
  mp.T = 0.0;
  CHECK_THROWS_AS(mp.validate(), ConfigError);
  mp = validation_merton();
  mp.kappa = -0.1;
  CHECK_THROWS_AS(mp.validate(), ConfigError);
}

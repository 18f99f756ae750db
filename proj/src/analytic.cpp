#include "pgdpo/analytic.hpp"

#include <Eigen/Eigenvalues>

namespace pgdpo {

void MertonParams::validate() const {
  require(sigma > 0.0, "merton: sigma must be > 0");
  require(R > 0.0, "merton: R must be > 0");
  require(std::abs(R - 1.0) > 1e-12, "merton: R = 1 (log utility) not supported");
  require(delta >= 0.0, "merton: delta must be >= 0");
  require(T > 0.0, "merton: T must be > 0");
  require(kappa >= 0.0, "merton: kappa must be >= 0");
}

double MertonParams::nu() const {
  const double ex = mu - r;
  return (delta - (1.0 - R) * (r + ex * ex / (2.0 * R * sigma * sigma))) / R;
}

namespace {

// g(t) solving g' = nu g - 1, g(T) = kappa^(1/R)
double merton_g(const MertonParams& mp, double t) {
  const double tau = mp.T - t;
  const double gT = std::pow(mp.kappa, 1.0 / mp.R);
  const double nu = mp.nu();
  if (nu == 0.0) return tau + gT;
  // -expm1(-nu tau)/nu is the annuity integral, stable for small nu
  return -std::expm1(-nu * tau) / nu + std::exp(-nu * tau) * gT;
}

}  // namespace

double merton_weight(const MertonParams& mp) {
  return (mp.mu - mp.r) / (mp.R * mp.sigma * mp.sigma);
}

double merton_consumption_fraction(const MertonParams& mp, double t) {
  const double g = merton_g(mp, t);
  require(g > 0.0, "merton: consumption fraction undefined (g <= 0)");
  return 1.0 / g;
}

double merton_value(const MertonParams& mp, double t, double W) {
  require(W > 0.0, "merton: wealth must be > 0");
  const double g = merton_g(mp, t);
  return std::exp(-mp.delta * t) * std::pow(g, mp.R) *
         std::pow(W, 1.0 - mp.R) / (1.0 - mp.R);
}

void merton_self_check(const MertonParams& mp, double rel_tol) {
  mp.validate();
  const int n = 200;
  const double h = mp.T / n;
  const double nu = mp.nu();
  auto rhs = [nu](double g) { return nu * g - 1.0; };
  double g = std::pow(mp.kappa, 1.0 / mp.R);  // integrate backward from T
  for (int i = n; i-- > 0;) {
    const double k1 = rhs(g);
    const double k2 = rhs(g - 0.5 * h * k1);
    const double k3 = rhs(g - 0.5 * h * k2);
    const double k4 = rhs(g - h * k3);
    g -= (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const double ref = merton_g(mp, i * h);
    const double scale = std::max(std::abs(ref), 1e-12);
    if (std::abs(g - ref) / scale > rel_tol)
      throw DivergenceError("merton self-check failed: ODE and closed form "
                            "disagree at t = " + std::to_string(i * h));
  }
}

Vec myopic_unconstrained(const MarketParams& mkt, double y, double R) {
  require(R > 0.0, "myopic: R must be > 0");
  const Mat S = mkt.covariance();
  const Vec excess = mkt.drift(y).array() - mkt.r;
  return S.ldlt().solve(excess) / R;
}

Vec myopic_policy(const MarketParams& mkt, double y, double R,
                  const PortfolioConstraint& pc) {
  require(R > 0.0, "myopic: R must be > 0");
  const Mat S = mkt.covariance();
  const Vec a = mkt.drift(y).array() - mkt.r;
  Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().maxCoeff();
  require(lmax > 0.0, "myopic: covariance not positive definite");
  const double step = 1.0 / (R * lmax);

  Vec pi = project_portfolio(myopic_unconstrained(mkt, y, R), pc).pi;
  for (int it = 0; it < 2000; ++it) {
    const Vec grad = a - R * (S * pi);
    Vec next = project_portfolio(pi + step * grad, pc).pi;
    const double move = (next - pi).norm();
    pi = std::move(next);
    if (move < 1e-15) break;
  }
  return pi;
}

}  // namespace pgdpo

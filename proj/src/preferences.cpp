#include "pgdpo/preferences.hpp"

namespace pgdpo {

void EZParams::validate() const {
  require(R > 0.0, "preferences: risk_aversion must be > 0");
  require(R != 1.0,
          "preferences: risk_aversion = 1 is outside the aggregator's domain "
          "((1-R) v > 0 is empty); use a nearby value");
  require(psi > 0.0, "preferences: eis must be > 0");
  require(delta > 0.0, "preferences: discount must be > 0");
  require(kappa_bequest >= 0.0, "preferences: bequest must be >= 0");
  require(c_bar > 0.0 && c_bar < 1.0, "preferences: need 0 < c_bar < 1");
  require(limit_tol >= 0.0, "preferences: limit_tol must be >= 0");
}

double crra_utility(double c, double R) {
  if (c < 0.0) throw std::domain_error("crra_utility: c < 0");
  if (R == 1.0) return std::log(c);
  if (c == 0.0) {
    if (R > 1.0) return -std::numeric_limits<double>::infinity();
    return 0.0;
  }
  return std::pow(c, 1.0 - R) / (1.0 - R);
}

double bequest_utility(double W, const EZParams& ez) {
  if (W < 0.0) throw std::domain_error("bequest_utility: W < 0");
  if (ez.kappa_bequest == 0.0) return 0.0;
  return ez.kappa_bequest * crra_utility(W, ez.R);
}

double bequest_marginal(double W, const EZParams& ez) {
  if (ez.kappa_bequest == 0.0) return 0.0;
  if (!(W > 0.0)) throw std::domain_error("bequest_marginal: W must be > 0");
  return ez.kappa_bequest * std::pow(W, -ez.R);
}

namespace {
void check_domain(double c, double v, const EZParams& ez) {
  if (!(c > 0.0)) throw std::domain_error("ez_aggregator: c must be > 0");
  if (!((1.0 - ez.R) * v > 0.0))
    throw std::domain_error("ez_aggregator: (1-R) v must be > 0");
}
}  // namespace

double ez_aggregator(double c, double v, const EZParams& ez) {
  check_domain(c, v, ez);
  const double R = ez.R, S = ez.S(), d = ez.delta;
  if (ez.crra_limit()) return d * (crra_utility(c, R) - v);
  const double A = (1.0 - R) * v;  // > 0
  // f = d theta v [ (c / A^{1/(1-R)})^{1-S} - 1 ]
  //   = d theta v [ c^{1-S} A^{(S-1)/(1-R)} - 1 ]
  const double ratio_pow = std::pow(c, 1.0 - S) * std::pow(A, (S - 1.0) / (1.0 - R));
  return d * ez.theta() * v * (ratio_pow - 1.0);
}

Vec crra_limit_sweep(double c, double v, double R, double delta,
                     const Vec& psi_grid) {
  EZParams ez;
  ez.R = R;
  ez.delta = delta;
  const double limit = delta * (crra_utility(c, R) - v);
  Vec dev(psi_grid.size());
  for (int k = 0; k < psi_grid.size(); ++k) {
    ez.psi = psi_grid[k];
    dev[k] = std::abs(ez_aggregator(c, v, ez) - limit);
  }
  return dev;
}

double ez_aggregator_dc(double c, double v, const EZParams& ez) {
  check_domain(c, v, ez);
  const double R = ez.R, S = ez.S(), d = ez.delta;
  if (ez.crra_limit()) return d * std::pow(c, -R);
  const double A = (1.0 - R) * v;
  // theta (1-S) = (1-R), so df/dc = d (1-R) v c^{-S} A^{(S-1)/(1-R)}
  return d * (1.0 - R) * v * std::pow(c, -S) *
         std::pow(A, (S - 1.0) / (1.0 - R));
}

}  // namespace pgdpo

#include "pgdpo/projection.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace pgdpo {

namespace {

// Euclidean projection onto { pi >= 0, sum(pi) = budget } by sorted-threshold
// water-filling. Stable sort => ties broken by ascending index.
Vec waterfill(const Vec& x, double budget, Eigen::Array<bool, Eigen::Dynamic, 1>* free_mask) {
  const int d = static_cast<int>(x.size());
  std::vector<int> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return x[a] > x[b]; });
  double cum = 0.0, tau = 0.0;
  int rho = 0;
  for (int k = 0; k < d; ++k) {
    cum += x[idx[k]];
    const double cand = (cum - budget) / (k + 1);
    if (x[idx[k]] - cand > 0.0) {
      rho = k + 1;
      tau = cand;
    }
  }
  Vec out(d);
  if (free_mask) free_mask->resize(d);
  for (int i = 0; i < d; ++i) {
    const double v = x[i] - tau;
    out[i] = v > 0.0 ? v : 0.0;
    if (free_mask) (*free_mask)[i] = v > 0.0;
  }
  return out;
}

}  // namespace

PortfolioProjection project_portfolio(const Vec& raw, const PortfolioConstraint& pc) {
  pc.validate();
  require(raw.size() >= 1, "project_portfolio: empty control");
  PortfolioProjection res;
  const int d = static_cast<int>(raw.size());
  if (pc.mode == PortfolioMode::equality) {
    res.pi = waterfill(raw, pc.budget, &res.jac.free);
    res.jac.sum_active = true;
    res.active = true;
    return res;
  }
  // capped: orthant projection if the cap is slack, else waterfill at the cap
  Vec y = raw.cwiseMax(0.0);
  if (y.sum() <= pc.leverage_cap) {
    res.pi = y;
    res.jac.free.resize(d);
    bool any_clamped = false;
    for (int i = 0; i < d; ++i) {
      res.jac.free[i] = raw[i] > 0.0;
      any_clamped = any_clamped || raw[i] <= 0.0;
    }
    res.jac.sum_active = false;
    res.active = any_clamped;
    return res;
  }
  res.pi = waterfill(raw, pc.leverage_cap, &res.jac.free);
  res.jac.sum_active = true;
  res.active = true;
  return res;
}

ConsumptionProjection project_consumption(double raw_c, double W, double c_bar,
                                          double floor_frac) {
  require(W > 0.0, "project_consumption: wealth must be positive");
  require(c_bar > 0.0 && floor_frac > 0.0 && floor_frac < c_bar,
          "project_consumption: need 0 < floor_frac < c_bar");
  const double lo = floor_frac * W;
  const double hi = c_bar * W;
  ConsumptionProjection cp;
  if (raw_c <= lo) {
    cp.c = lo;
    cp.at_floor = true;
  } else if (raw_c >= hi) {
    cp.c = hi;
    cp.at_cap = true;
  } else {
    cp.c = raw_c;
  }
  return cp;
}

ProjectedControl project_control(const Vec& raw_pi, double raw_c, double W,
                                 const PortfolioConstraint& pc, double c_bar) {
  ProjectedControl out;
  PortfolioProjection pp = project_portfolio(raw_pi, pc);
  ConsumptionProjection cp = project_consumption(raw_c, W, c_bar);
  out.pi = std::move(pp.pi);
  out.c = cp.c;
  if (pp.active) out.flags |= kFlagPortfolioActive;
  if (cp.at_floor) out.flags |= kFlagConsFloor;
  if (cp.at_cap) out.flags |= kFlagConsCap;
  return out;
}

double infeasibility_distance(const Vec& pi, double c, double W,
                              const PortfolioConstraint& pc, double c_bar,
                              double floor_frac) {
  PortfolioProjection pp = project_portfolio(pi, pc);
  const double lo = floor_frac * W, hi = c_bar * W;
  const double cc = std::min(std::max(c, lo), hi);
  return std::sqrt((pi - pp.pi).squaredNorm() + (c - cc) * (c - cc));
}

}  // namespace pgdpo

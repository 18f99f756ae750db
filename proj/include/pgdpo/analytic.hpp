#pragma once

// Closed-form single-asset Merton benchmark (constant investment
// opportunities, CRRA utility, finite horizon with bequest) and the
// constrained myopic portfolio rule used by the hedging decomposition.
//
// Conventions: the objective is the discounted expectation
//   E[ integral_0^T e^{-delta t} u(c_t) dt + e^{-delta T} kappa u(W_T) ],
// u(c) = c^(1-R)/(1-R). The value function carries the e^{-delta t} factor:
//   V(t, W) = e^{-delta t} g(t)^R u'(1)... concretely g(t)^R W^(1-R)/(1-R)
// with 1/g(t) the optimal consumption fraction, g' = nu g - 1, g(T) =
// kappa^(1/R), nu = [delta - (1-R)(r + (mu-r)^2/(2 R sigma^2))]/R.

#include "pgdpo/common.hpp"
#include "pgdpo/market.hpp"
#include "pgdpo/projection.hpp"

namespace pgdpo {

struct MertonParams {
  double r = 0.02;
  double mu = 0.10;
  double sigma = 0.20;
  double R = 1.5;
  double delta = 0.03;
  double T = 1.5;
  double kappa = 1.0;  // bequest weight of the plain discounted objective

  void validate() const;
  double nu() const;
};

// constant optimal risky weight (mu - r) / (R sigma^2)
double merton_weight(const MertonParams& mp);

// optimal consumption fraction kappa(t) = 1/g(t); exact also in the nu -> 0
// limit 1/(T - t + kappa^(1/R))
double merton_consumption_fraction(const MertonParams& mp, double t);

// discounted value function e^{-delta t} g(t)^R W^(1-R)/(1-R)
double merton_value(const MertonParams& mp, double t, double W);

// Runtime transcription guard: integrates g' = nu g - 1 with RK4 and compares
// to the closed form on a time grid; throws DivergenceError beyond rel_tol.
void merton_self_check(const MertonParams& mp, double rel_tol = 1e-3);

// Myopic benchmark: argmax over Pi of pi^T (mu(Y) - r 1) - (R/2) pi^T S pi,
// S = Sigma Sigma^T. Solved by projected gradient on the concave quadratic
// (deterministic fixed iteration budget, step 1/(R lambda_max)); equals
// proj_Pi((1/R) S^{-1}(mu - r 1)) whenever that point is feasible.
Vec myopic_policy(const MarketParams& mkt, double y, double R,
                  const PortfolioConstraint& pc);

// unconstrained (1/R) S^{-1} (mu(Y) - r 1)
Vec myopic_unconstrained(const MarketParams& mkt, double y, double R);

}  // namespace pgdpo

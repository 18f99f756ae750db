#pragma once

// Recursive utility: CRRA felicity, the Epstein-Zin normalized aggregator
// f(c, v) and its consumption derivative, and the bequest term.
//
// Conventions:
//   R = relative risk aversion, psi = elasticity of intertemporal
//   substitution, S = 1/psi, theta = (1-R)/(1-S). The aggregator's domain is
//   c > 0 and (1-R)*v > 0 (v < 0 for R > 1, v > 0 for R < 1).
//   When |S - R| <= limit_tol the aggregator degenerates to its CRRA limit
//   delta * (u(c) - v); both branches agree to O(|S - R|) at the switch.

#include "pgdpo/common.hpp"

namespace pgdpo {

struct EZParams {
  double R = 1.5;              // relative risk aversion
  double psi = 0.5;            // elasticity of intertemporal substitution
  double delta = 0.03;         // subjective discount rate
  double kappa_bequest = 1.0;  // terminal weight on bequest utility
  double c_bar = 0.25;         // consumption-ratio cap (consumption <= c_bar * W)
  double limit_tol = 1e-6;     // |S - R| threshold for the CRRA-limit branch

  double S() const { return 1.0 / psi; }
  bool crra_limit() const { return std::abs(S() - R) <= limit_tol; }
  double theta() const { return (1.0 - R) / (1.0 - S()); }
  void validate() const;
};

// c^(1-R)/(1-R); log c at R = 1. c = 0 returns -inf for R > 1 and 0 for R < 1.
double crra_utility(double c, double R);

// kappa * W^(1-R)/(1-R)
double bequest_utility(double W, const EZParams& ez);

// d bequest_utility / d W = kappa * W^-R (requires W > 0 unless kappa = 0)
double bequest_marginal(double W, const EZParams& ez);

double ez_aggregator(double c, double v, const EZParams& ez);

// partial f / partial c; closed form, matches central differences of
// ez_aggregator to relative 1e-6 on admissible points.
double ez_aggregator_dc(double c, double v, const EZParams& ez);

// deviation |f(c, v; psi_k) - delta (u(c) - v)| for each psi_k in the grid;
// decreases to 0 as psi_k -> 1/R (how the aggregator collapses to CRRA).
Vec crra_limit_sweep(double c, double v, double R, double delta,
                     const Vec& psi_grid);

}  // namespace pgdpo

#pragma once

// Euclidean projections onto the admissible control sets, their binding
// diagnostics, and the generalized Jacobians the actor's chain rule uses.
//
// Portfolio sets:
//   equality : { pi >= 0, sum(pi) = budget }
//   capped   : { pi >= 0, sum(pi) <= leverage_cap }
// Both are solved by sorted-threshold water-filling (ties broken by ascending
// index via a stable sort; the projection itself is unique regardless).
//
// Consumption is clipped to [floor_frac * W, c_bar * W]. The floor keeps the
// preference aggregator's domain safe, so it is enforced even in soft-penalty
// training mode.

#include "pgdpo/common.hpp"

#include <cstdint>

namespace pgdpo {

enum class PortfolioMode { equality, capped };

struct PortfolioConstraint {
  PortfolioMode mode = PortfolioMode::equality;
  double budget = 1.0;        // sum(pi) level in equality mode
  double leverage_cap = 2.0;  // sum(pi) upper bound in capped mode
  void validate() const {
    require(budget > 0.0, "constraints: budget must be > 0");
    require(leverage_cap > 0.0, "constraints: leverage_cap must be > 0");
  }
};

// step-level binding flags (OR-able)
enum ControlFlags : uint8_t {
  kFlagFloorHit = 1,        // wealth floor clamped this step
  kFlagConsFloor = 2,       // consumption clipped at its lower bound
  kFlagConsCap = 4,         // consumption clipped at c_bar * W
  kFlagPortfolioActive = 8  // some portfolio constraint is active
};

// Generalized Jacobian of the portfolio projection at the evaluated point.
// For the simplex cases it is P_F (I - 1 1^T / |F|) P_F restricted to the
// free set F (symmetric); for a slack cap it is diag(free). Coordinates
// clamped at zero get zero rows/columns and re-enter only through the
// water-filling threshold as the free coordinates move.
struct PortfolioJacobian {
  Eigen::Array<bool, Eigen::Dynamic, 1> free;
  bool sum_active = false;

  Vec apply(const Vec& g) const {
    const int d = static_cast<int>(free.size());
    Vec out = Vec::Zero(d);
    int nf = 0;
    double s = 0.0;
    for (int i = 0; i < d; ++i)
      if (free[i]) {
        ++nf;
        s += g[i];
      }
    if (nf == 0) return out;
    const double shift = sum_active ? s / nf : 0.0;
    for (int i = 0; i < d; ++i)
      if (free[i]) out[i] = g[i] - shift;
    return out;
  }
};

struct PortfolioProjection {
  Vec pi;
  PortfolioJacobian jac;
  bool active = false;  // any constraint active (always true in equality mode)
};

PortfolioProjection project_portfolio(const Vec& raw, const PortfolioConstraint& pc);

struct ConsumptionProjection {
  double c = 0.0;
  bool at_floor = false;
  bool at_cap = false;
  // One-sided derivative in the escape direction: 1 when the proposed ascent
  // direction points into the feasible interval, else the active-set value.
  double gate(double ascent_direction) const {
    if (at_floor) return ascent_direction > 0.0 ? 1.0 : 0.0;
    if (at_cap) return ascent_direction < 0.0 ? 1.0 : 0.0;
    return 1.0;
  }
};

inline constexpr double kConsumptionFloorFrac = 1e-6;

ConsumptionProjection project_consumption(double raw_c, double W, double c_bar,
                                          double floor_frac = kConsumptionFloorFrac);

struct ProjectedControl {
  Vec pi;
  double c = 0.0;
  uint8_t flags = 0;
};

ProjectedControl project_control(const Vec& raw_pi, double raw_c, double W,
                                 const PortfolioConstraint& pc, double c_bar);

// Euclidean distance from (pi, c) to the admissible set Pi x [floor, c_bar W].
double infeasibility_distance(const Vec& pi, double c, double W,
                              const PortfolioConstraint& pc, double c_bar,
                              double floor_frac = kConsumptionFloorFrac);

}  // namespace pgdpo

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pgdpo/preferences.hpp"

using namespace pgdpo;

namespace {

EZParams base() {  // R = 1.5, psi = 0.5, delta = 0.03
  return EZParams{};
}

double central_dc(double c, double v, const EZParams& ez, double h = 1e-6) {
  return (ez_aggregator(c + h, v, ez) - ez_aggregator(c - h, v, ez)) / (2 * h);
}

}  // namespace

TEST_CASE("crra utility worked values") {
  CHECK(crra_utility(1.0, 1.5) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(crra_utility(1.0, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(crra_utility(4.0, 0.5) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(crra_utility(0.0, 1.5) == -std::numeric_limits<double>::infinity());
  CHECK(crra_utility(0.0, 0.5) == 0.0);
  CHECK(std::isinf(crra_utility(0.0, 1.0)));  // log 0
  CHECK_THROWS_AS(crra_utility(-1.0, 1.5), std::domain_error);
}

TEST_CASE("bequest utility") {
  EZParams ez = base();
  CHECK(bequest_utility(1.0, ez) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(bequest_utility(0.1, ez) ==
        doctest::Approx(-2.0 * std::sqrt(10.0)).epsilon(1e-12));
  CHECK(bequest_utility(0.1, ez) == doctest::Approx(-6.3246).epsilon(1e-4));
  CHECK(bequest_utility(0.0, ez) == -std::numeric_limits<double>::infinity());
  EZParams nk = base();
  nk.kappa_bequest = 0.0;
  CHECK(bequest_utility(0.0, nk) == 0.0);  // no -inf * 0
  EZParams half = base();
  half.kappa_bequest = 0.5;
  CHECK(bequest_utility(1.0, half) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(bequest_utility(-0.5, ez), std::domain_error);
}

TEST_CASE("bequest marginal matches central differences of bequest utility") {
  EZParams ez = base();
  CHECK(bequest_marginal(1.0, ez) == doctest::Approx(1.0).epsilon(1e-14));
  for (double W : {0.2, 0.7, 1.0, 1.9, 4.0}) {
    const double h = 1e-6 * W;
    const double fd =
        (bequest_utility(W + h, ez) - bequest_utility(W - h, ez)) / (2.0 * h);
    CHECK(bequest_marginal(W, ez) == doctest::Approx(fd).epsilon(1e-8));
  }
  EZParams nk = base();
  nk.kappa_bequest = 0.0;
  CHECK(bequest_marginal(0.5, nk) == 0.0);
  CHECK(bequest_marginal(0.0, nk) == 0.0);  // kappa = 0 short-circuits
  CHECK_THROWS_AS(bequest_marginal(0.0, ez), std::domain_error);
  CHECK_THROWS_AS(bequest_marginal(-1.0, ez), std::domain_error);
}

TEST_CASE("aggregator worked values") {
  EZParams ez = base();
  CHECK(ez.S() == doctest::Approx(2.0));
  CHECK(ez.theta() == doctest::Approx(0.5));
  CHECK_FALSE(ez.crra_limit());

  // c = ((1-R) v)^{1/(1-R)} is the aggregator's zero
  CHECK(ez_aggregator(1.0, -2.0, ez) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ez_aggregator(2.0, -2.0, ez) == doctest::Approx(0.015).epsilon(1e-12));
  CHECK(ez_aggregator_dc(2.0, -2.0, ez) ==
        doctest::Approx(0.0075).epsilon(1e-12));

  for (double v : {-0.5, -2.0, -4.0}) {
    const double cstar = std::pow((1.0 - ez.R) * v, 1.0 / (1.0 - ez.R));
    CHECK(ez_aggregator(cstar, v, ez) == doctest::Approx(0.0).epsilon(1e-12));
  }
  EZParams low;  // R < 1 side of the domain
  low.R = 0.5;
  low.psi = 1.5;
  for (double v : {0.5, 2.0, 4.0}) {
    const double cstar = std::pow((1.0 - low.R) * v, 1.0 / (1.0 - low.R));
    CHECK(ez_aggregator(cstar, v, low) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("crra limit branch") {
  EZParams lim = base();
  lim.psi = 2.0 / 3.0;  // psi = 1/R exactly (within limit_tol)
  CHECK(lim.crra_limit());
  CHECK(ez_aggregator(1.0, -3.0, lim) == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(ez_aggregator_dc(1.0, -3.0, lim) ==
        doctest::Approx(0.03).epsilon(1e-12));
  // limit dc = delta c^{-R}
  CHECK(ez_aggregator_dc(2.0, -3.0, lim) ==
        doctest::Approx(0.03 * std::pow(2.0, -1.5)).epsilon(1e-12));
}

TEST_CASE("limit sweep decreases monotonically to <= 1e-3") {
  const double R = 1.5, delta = 0.03, psi_star = 1.0 / R;
  const double offsets[] = {1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4};
  for (double sgn : {+1.0, -1.0}) {
    Vec grid(7);
    for (int k = 0; k < 7; ++k) grid[k] = psi_star + sgn * offsets[k];
    const Vec dev = crra_limit_sweep(2.0, -2.0, R, delta, grid);
    for (int k = 1; k < 7; ++k) CHECK(dev[k] < dev[k - 1]);
    CHECK(dev[6] <= 1e-3);
  }
  // exactly at psi = 1/R the branch switch makes the deviation vanish
  // (up to one ulp of fp-contraction slack between the two call sites)
  Vec at(1);
  at[0] = psi_star;
  CHECK(crra_limit_sweep(2.0, -2.0, R, delta, at)[0] <= 1e-15);
}

TEST_CASE("closed-form dc matches central differences at 1e-6") {
  struct Set {
    double R, psi, c_lo, c_hi, v_lo, v_hi;
  };
  const Set sets[] = {
      {1.5, 0.5, 0.5, 3.0, -5.0, -0.2},   // baseline side, v < 0
      {3.0, 0.8, 0.5, 3.0, -5.0, -0.2},   // higher curvature
      {0.5, 1.5, 0.5, 3.0, 0.2, 5.0},     // R < 1 side, v > 0
      {2.0, 0.5, 0.5, 3.0, -5.0, -0.2},   // psi = 1/R: CRRA-limit branch
  };
  RngStream rng(77);
  int n_checked = 0;
  for (const Set& s : sets) {
    EZParams ez;
    ez.R = s.R;
    ez.psi = s.psi;
    for (int i = 0; i < 300; ++i) {
      const double c = rng.uniform(s.c_lo, s.c_hi);
      const double v = rng.uniform(s.v_lo, s.v_hi);
      const double fd = central_dc(c, v, ez);
      const double an = ez_aggregator_dc(c, v, ez);
      CHECK(std::abs(fd - an) <= 1e-6 * std::max(std::abs(an), 1e-12));
      ++n_checked;
    }
  }
  CHECK(n_checked >= 1000);
}

TEST_CASE("aggregator domain guards") {
  EZParams ez = base();
  CHECK_THROWS_AS(ez_aggregator(-1.0, -2.0, ez), std::domain_error);
  CHECK_THROWS_AS(ez_aggregator(0.0, -2.0, ez), std::domain_error);
  CHECK_THROWS_AS(ez_aggregator(1.0, 0.5, ez), std::domain_error);  // v sign
  CHECK_THROWS_AS(ez_aggregator(1.0, 0.0, ez), std::domain_error);
  CHECK_THROWS_AS(ez_aggregator_dc(1.0, 0.5, ez), std::domain_error);
  EZParams low = base();
  low.R = 0.5;
  low.psi = 1.5;
  CHECK_THROWS_AS(ez_aggregator(1.0, -0.5, low), std::domain_error);
}

TEST_CASE("parameter validation") {
  EZParams ez = base();
  CHECK_NOTHROW(ez.validate());
  auto expect_reject = [](auto mutate) {
    EZParams p;
    mutate(p);
    CHECK_THROWS_AS(p.validate(), ConfigError);
  };
  expect_reject([](EZParams& p) { p.R = 0.0; });
  expect_reject([](EZParams& p) { p.R = 1.0; });
  expect_reject([](EZParams& p) { p.psi = 0.0; });
  expect_reject([](EZParams& p) { p.delta = 0.0; });
  expect_reject([](EZParams& p) { p.kappa_bequest = -1.0; });
  expect_reject([](EZParams& p) { p.c_bar = 0.0; });
  expect_reject([](EZParams& p) { p.c_bar = 1.0; });
  expect_reject([](EZParams& p) { p.limit_tol = -1e-9; });
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ilqc/errors.hpp"
#include "ilqc/regularity.hpp"
#include "ilqc/riccati.hpp"
#include "test_support.hpp"

using namespace ilqc;

namespace {

LqProblem regular_variant() {
  LqProblem p = testutil::free_channel_example(200);
  p.R = CoefficientFn::constant(Mat::Identity(2, 2));
  return p;
}

}  // namespace

TEST_CASE("the singular example is irregular everywhere, the R=I variant regular") {
  LqProblem p = testutil::free_channel_example(400);
  MatrixGrid P = integrate_p(p);
  RegularityReport rep = classify(p, P);
  CHECK(rep.irregular);
  CHECK(rep.m0 == 1);
  CHECK_FALSE(rep.rank_profile_changed);
  for (const NodeClassification& nc : rep.nodes) {
    CHECK(nc.irregular);
    CHECK(nc.m0 == 1);
    if (nc.t <= 0.99) CHECK(nc.range_residual > 0.5);
  }

  LqProblem rv = regular_variant();
  MatrixGrid Pr = integrate_p(rv);
  RegularityReport rr = classify(rv, Pr);
  CHECK_FALSE(rr.irregular);
  CHECK(rr.m0 == 2);
  CHECK(rr.free_dim() == 0);
  for (const NodeClassification& nc : rr.nodes) CHECK_FALSE(nc.irregular);
}

TEST_CASE("classify tabulates the example's denotations correctly") {
  LqProblem p = testutil::free_channel_example(100);
  MatrixGrid P = integrate_p(p);
  RegularityReport rep = classify(p, P);

  // transform at t0: T0 = I, zero row first, free block [0, 1]
  CHECK(rep.transform.m0 == 1);
  CHECK((rep.transform.t0 - Mat::Identity(2, 2)).norm() == 0.0);

  // B0 = -1 and G0 = [0; 1] for all t; A0 = 1 - P(t), D0 = -1
  const TimeGrid& dg = rep.design_grid();
  CHECK(dg.n_steps == 400);  // default refine = 4
  for (int j = 0; j < dg.nodes(); j += 25) {
    const double t = dg.node(j);
    CHECK(rep.B0.node(j)(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK((rep.G0.node(j) - (Mat(2, 1) << 0.0, 1.0).finished()).norm() < 1e-12);
    const double pt = testutil::logistic_value(t);
    CHECK(rep.A0(t)(0, 0) == doctest::Approx(1.0 - pt).epsilon(1e-7));
    CHECK(rep.D0(t)(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
  }
}

TEST_CASE("select_p1_terminal pins the example's correction and reports the family") {
  LqProblem p = testutil::free_channel_example(200);
  MatrixGrid P = integrate_p(p);
  RegularityReport rep = classify(p, P);
  TerminalSelection sel = select_p1_terminal(p, rep);
  CHECK(sel.p1_terminal(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(sel.constraint_residual < 1e-12);
  CHECK(sel.family_dimension == 0);  // B0(T) spans the scalar state space

  // regular problems keep the base cost untouched
  LqProblem rv = regular_variant();
  MatrixGrid Pr = integrate_p(rv);
  RegularityReport rr = classify(rv, Pr);
  TerminalSelection sr = select_p1_terminal(rv, rr);
  CHECK(sr.p1_terminal.norm() == 0.0);
  CHECK(sr.family_dimension == 1);
}

TEST_CASE("the correction layer cancels the example's cost: P1 = -P, Pbar = 0") {
  LqProblem p = testutil::free_channel_example(500);
  MatrixGrid P = integrate_p(p);
  RegularityReport rep = classify(p, P);
  TerminalSelection sel = select_p1_terminal(p, rep);

  P1Result p1 = integrate_p1(p, sel.p1_terminal, rep);
  REQUIRE(p1.grid.grid == p.grid);
  for (int k = 0; k < p.grid.nodes(); k += 50) {
    const double exact = -testutil::logistic_value(p.grid.node(k));
    CHECK(p1.grid.node(k)(0, 0) == doctest::Approx(exact).epsilon(1e-9));
  }

  MatrixGrid pbar = integrate_pbar(p, sel.p1_terminal);
  CHECK(check_pbar_identity(P, p1.grid, pbar) < 1e-8);

  RegularizedCheck rc = check_regularized(p, pbar);
  CHECK(rc.ok);
  CHECK(rc.max_residual < 1e-10);

  // leaving the terminal unmodified keeps the cost irregular
  RegularizedCheck bad = check_regularized(p, P);
  CHECK_FALSE(bad.ok);
  CHECK(bad.max_residual > 0.5);
}

TEST_CASE("integrate_p1 accepts a refined output grid") {
  LqProblem p = testutil::free_channel_example(100);
  MatrixGrid P = integrate_p(p);
  RegularityReport rep = classify(p, P);
  TerminalSelection sel = select_p1_terminal(p, rep);
  P1Result half = integrate_p1(p, sel.p1_terminal, rep, p.grid.refined(2));
  CHECK(half.grid.grid.n_steps == 200);
  const double exact = -testutil::logistic_value(half.grid.grid.node(1));
  CHECK(half.grid.node(1)(0, 0) == doctest::Approx(exact).epsilon(1e-8));
}

TEST_CASE("deterministic assumption checks are vacuous, stochastic pz2 guarded") {
  LqProblem p = testutil::free_channel_example(100);
  MatrixGrid P = integrate_p(p);
  RegularityReport rep = classify(p, P);
  TerminalSelection sel = select_p1_terminal(p, rep);
  P1Result p1 = integrate_p1(p, sel.p1_terminal, rep);

  Assumption2Report a2 = check_assumption2(p, rep, p1.grid);
  CHECK(a2.holds(1e-12));
  CHECK_THROWS_AS(check_pz2(rep, p1.grid), Error);
}

TEST_CASE("fill_closed_loop tabulates the example's loop matrices") {
  LqProblem p = testutil::free_channel_example(200);
  MatrixGrid P = integrate_p(p);
  RegularityReport rep = classify(p, P);
  TerminalSelection sel = select_p1_terminal(p, rep);
  P1Result p1 = integrate_p1(p, sel.p1_terminal, rep, p.grid.refined(2));

  fill_closed_loop(rep, p1.grid);
  REQUIRE(rep.closed_loop_filled);
  // A1 = A0 + D0 P1 = (1 - P) + P = 1, B1 = B0 = -1
  for (int k = 0; k < p1.grid.grid.nodes(); k += 40) {
    const double t = p1.grid.grid.node(k);
    CHECK(rep.A1(t)(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(rep.B1(t)(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(rep.Bbar1(t).norm() == 0.0);
  }
}

TEST_CASE("classification is invariant under the pivot rule choice") {
  LqProblem p = testutil::free_channel_example(100);
  MatrixGrid P = integrate_p(p);
  ClassifyOptions a, b;
  a.pivot = PivotRule::largest_abs;
  b.pivot = PivotRule::lowest_index;
  RegularityReport ra = classify(p, P, a);
  RegularityReport rb = classify(p, P, b);
  CHECK(ra.irregular == rb.irregular);
  CHECK(ra.m0 == rb.m0);
  // the free-direction input maps span the same column space at T
  const Mat ba = ra.B0.back();
  const Mat bb = rb.B0.back();
  CHECK(range_subset(ba, bb, 1e-9));
  CHECK(range_subset(bb, ba, 1e-9));
}

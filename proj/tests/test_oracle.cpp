#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ilqc/det_synth.hpp"
#include "ilqc/errors.hpp"
#include "ilqc/oracle.hpp"
#include "ilqc/regularity.hpp"
#include "ilqc/riccati.hpp"
#include "test_support.hpp"

using namespace ilqc;

namespace {

// Closed-form perturbed value for the free-channel example: with weight
// diag(1+eps, eps) the Riccati flow is -dp/dt = 2p - c p^2, c = 1/eps +
// 1/(1+eps), which linearizes in w = 1/p.
double perturbed_value_closed_form(double eps) {
  const double c = 1.0 / eps + 1.0 / (1.0 + eps);
  const double w0 = (1.0 - 0.5 * c) * std::exp(-2.0) + 0.5 * c;
  return 1.0 / w0;
}

// Scalar regular problem with q = 0: dp/dt = -2 a p + (b^2 / r) p^2 in
// closed form via w = 1/p.
double scalar_lqr_value(double a, double b, double r, double H, double T,
                        double t) {
  const double s = b * b / (2.0 * a * r);
  const double c = (1.0 / H - s) * std::exp(-2.0 * a * T);
  return 1.0 / (c * std::exp(2.0 * a * t) + s);
}

double synthesized_cost(const LqProblem& p) {
  const MatrixGrid P = integrate_p(p);
  const RegularityReport report = classify(p, P);
  const TerminalSelection sel = select_p1_terminal(p, report);
  const P1Result p1 = integrate_p1(p, sel.p1_terminal, report);
  const Controller c = synthesize(p, P, p1.grid, report);
  return simulate(p, c).realized_cost;
}

}  // namespace

TEST_CASE("perturbation oracle matches the closed-form perturbed value") {
  LqProblem p = testutil::free_channel_example(500);
  double previous = 1e300;
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    OracleResult r = perturbation_solve(p, eps);
    CHECK(r.method == OracleMethod::perturbation);
    CHECK(r.eps == eps);
    CHECK(r.control_grid.size() == static_cast<size_t>(p.grid.nodes()));
    const double exact = perturbed_value_closed_form(eps);
    CHECK(r.optimal_cost == doctest::Approx(exact).epsilon(1e-6));
    CHECK(r.optimal_cost > 0.0);
    CHECK(r.optimal_cost < previous);  // value shrinks with the weight
    previous = r.optimal_cost;
  }
  // dyadic gaps shrink: the values are Cauchy toward the singular optimum 0
  const double j1 = perturbation_solve(p, 4e-3).optimal_cost;
  const double j2 = perturbation_solve(p, 2e-3).optimal_cost;
  const double j3 = perturbation_solve(p, 1e-3).optimal_cost;
  CHECK(std::abs(j2 - j3) < std::abs(j1 - j2));
}

TEST_CASE("perturbation on a regular problem moves the value by O(eps)") {
  LqProblem p = testutil::free_channel_example(500);
  p.R = CoefficientFn::constant(Mat::Identity(2, 2));
  const double base = integrate_p(p).front()(0, 0);
  const double eps = 1e-4;
  OracleResult r = perturbation_solve(p, eps);
  CHECK(r.optimal_cost >= base - 1e-10);  // larger weight, larger value
  CHECK(std::abs(r.optimal_cost - base) < 10.0 * eps);
}

TEST_CASE("qp oracle steers through the free channel at zero cost") {
  LqProblem p = testutil::free_channel_example(200);
  OracleResult r = discretized_qp_solve(p, 200);
  CHECK(r.method == OracleMethod::discretized_qp);
  CHECK(r.n_steps == 200);
  CHECK(r.control_grid.size() == 200);
  // the unweighted channel reaches x(T)=0 exactly, so the discrete optimum
  // vanishes at every resolution
  CHECK(r.optimal_cost >= 0.0);
  CHECK(r.optimal_cost < 1e-10);
  // weighted channel stays idle
  double weighted = 0.0;
  for (const Vec& u : r.control_grid) weighted = std::max(weighted, std::abs(u(0)));
  CHECK(weighted < 1e-6);
}

TEST_CASE("qp oracle reproduces a scalar regular value from above") {
  LqProblem p;
  p.kind = ProblemKind::deterministic;
  p.grid = TimeGrid(0.0, 1.0, 200);
  p.x0 = Vec::Constant(1, 1.3);
  p.A = CoefficientFn::constant(Mat::Constant(1, 1, -0.5));
  p.B = CoefficientFn::constant(Mat::Ones(1, 1));
  p.Q = CoefficientFn::constant(Mat::Zero(1, 1));
  p.R = CoefficientFn::constant(Mat::Ones(1, 1));
  p.H = Mat::Constant(1, 1, 2.0);

  const double exact = 1.3 * 1.3 * scalar_lqr_value(-0.5, 1.0, 1.0, 2.0, 1.0, 0.0);
  const double j100 = discretized_qp_solve(p, 100).optimal_cost;
  const double j200 = discretized_qp_solve(p, 200).optimal_cost;
  // piecewise-constant controls are a subset of admissible ones, so the
  // discrete value can only sit above the continuous one
  CHECK(j100 >= exact - 1e-9);
  CHECK(j200 >= exact - 1e-9);
  CHECK(std::abs(j200 - exact) < 2e-3);
  CHECK(std::abs(j200 - exact) <= std::abs(j100 - exact));
}

TEST_CASE("qp oracle: no cost means zero controls") {
  LqProblem p = testutil::free_channel_example(100);
  p.Q = CoefficientFn::constant(Mat::Zero(1, 1));
  p.H = Mat::Zero(1, 1);
  OracleResult r = discretized_qp_solve(p, 100);
  CHECK(r.optimal_cost == doctest::Approx(0.0).epsilon(1e-15));
  for (const Vec& u : r.control_grid) CHECK(u.norm() < 1e-12);
}

TEST_CASE("qp oracle refuses problems beyond the dense guard") {
  LqProblem p = testutil::free_channel_example(100);
  CHECK_THROWS_AS(discretized_qp_solve(p, 10001), TooLarge);
}

TEST_CASE("oracles reject stochastic problems and bad eps") {
  LqProblem p = testutil::free_channel_example(100);
  CHECK_THROWS_AS(perturbation_solve(p, 0.0), Error);
  CHECK_THROWS_AS(perturbation_solve(p, -1e-3), Error);
  LqProblem s = p;
  s.kind = ProblemKind::stochastic;
  s.Abar = CoefficientFn::constant(Mat::Zero(1, 1));
  s.Bbar = CoefficientFn::constant(Mat::Zero(1, 2));
  CHECK_THROWS_AS(perturbation_solve(s, 1e-2), Error);
  CHECK_THROWS_AS(discretized_qp_solve(s, 100), Error);
}

TEST_CASE("oracle sandwich around the synthesized optimum") {
  LqProblem p = testutil::free_channel_example(400);
  const double realized = synthesized_cost(p);
  const double qp = discretized_qp_solve(p, 400).optimal_cost;
  const double pert = perturbation_solve(p, 1e-4).optimal_cost;
  // value of the example is 0; the relaxation may only undershoot within
  // discretization error, the perturbation only overshoot
  CHECK(qp <= realized + 1e-3);
  CHECK(qp >= -1e-3);
  CHECK(std::abs(qp - pert) < 1e-3);
}

TEST_CASE("all three methods agree on a regular fixture") {
  LqProblem p;
  p.kind = ProblemKind::deterministic;
  p.grid = TimeGrid(0.0, 1.0, 400);
  p.x0 = (Vec(2) << 1.0, -0.5).finished();
  p.A = CoefficientFn::constant((Mat(2, 2) << 0.3, 0.4, -0.2, 0.1).finished());
  p.B = CoefficientFn::constant((Mat(2, 2) << 1.0, 0.0, 0.2, 0.8).finished());
  p.Q = CoefficientFn::constant((Mat(2, 2) << 0.5, 0.1, 0.1, 0.3).finished());
  p.R = CoefficientFn::constant(Mat::Identity(2, 2));
  p.H = (Mat(2, 2) << 1.0, 0.0, 0.0, 0.5).finished();

  const double synth = synthesized_cost(p);
  const double qp = discretized_qp_solve(p, 400).optimal_cost;
  const double pert = perturbation_solve(p, 1e-4).optimal_cost;
  const double scale = std::max(1.0, std::abs(synth));
  CHECK(std::abs(synth - qp) < 1e-3 * scale);
  CHECK(std::abs(synth - pert) < 1e-3 * scale);
  CHECK(std::abs(qp - pert) < 1e-3 * scale);
}

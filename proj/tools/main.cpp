// Command-line front end: classify / solve / simulate / verify / oracle / demo.
// Emits CSV and JSON artifacts; library errors map straight to exit codes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ilqc/det_synth.hpp"
#include "ilqc/errors.hpp"
#include "ilqc/oracle.hpp"
#include "ilqc/problem.hpp"
#include "ilqc/regularity.hpp"
#include "ilqc/riccati.hpp"
#include "ilqc/stoch_synth.hpp"

namespace {

using ilqc::Mat;
using ilqc::Vec;
using nlohmann::json;

struct Options {
  std::string problem;
  std::string out = ".";
  std::string trace;
  std::string method = "qp";
  double tol_rank = ilqc::kRankTol;
  double tol_res = 1e-6;
  std::uint64_t seed = 20240101;
  int paths = 1000;
  int qp_steps = 2000;
  std::vector<double> eps = {1e-1, 1e-2, 1e-3, 1e-4};
  bool warn_assumption2 = false;
};

std::filesystem::path out_path(const Options& o, const std::string& name) {
  std::filesystem::create_directories(o.out);
  return std::filesystem::path(o.out) / name;
}

std::ofstream open_out(const Options& o, const std::string& name) {
  const auto path = out_path(o, name);
  std::ofstream os(path);
  if (!os)
    throw ilqc::Error(ilqc::ErrorCode::generic,
                      "cannot write " + path.string());
  return os;
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

void write_u1_csv(std::ostream& os, const ilqc::TimeGrid& grid,
                  const std::vector<Vec>& u1) {
  os << "t";
  const Eigen::Index f = u1.empty() ? 0 : u1.front().size();
  for (Eigen::Index j = 0; j < f; ++j) os << ",u1_" << j;
  os << "\n";
  os.precision(17);
  for (std::size_t k = 0; k < u1.size(); ++k) {
    os << grid.node(static_cast<int>(k));
    for (Eigen::Index j = 0; j < f; ++j) os << "," << u1[k](j);
    os << "\n";
  }
}

ilqc::LqProblem load(const Options& o) {
  if (o.problem.empty())
    throw ilqc::ParseError("no problem file given; pass --problem PATH");
  return ilqc::load_problem_file(o.problem);
}

// Shared front half of every pipeline: base Riccati flow, node-wise
// classification, terminal correction, and the two derived flows.
struct Pipeline {
  ilqc::MatrixGrid P;
  ilqc::RegularityReport report;
  ilqc::TerminalSelection sel;
  ilqc::MatrixGrid p1;
  ilqc::MatrixGrid pbar;
};

Pipeline run_pipeline(const ilqc::LqProblem& p, const Options& o) {
  Pipeline pl;
  pl.P = ilqc::integrate_p(p);
  ilqc::ClassifyOptions copts;
  copts.rank_tol = o.tol_rank;
  copts.residual_tol = o.tol_res;
  pl.report = ilqc::classify(p, pl.P, copts);
  pl.sel = ilqc::select_p1_terminal(p, pl.report, o.tol_rank);
  ilqc::RiccatiOptions ropts;
  ropts.rank_tol = o.tol_rank;
  pl.p1 = ilqc::integrate_p1(p, pl.sel.p1_terminal, pl.report, ropts).grid;
  pl.pbar =
      ilqc::integrate_pbar(p, pl.sel.p1_terminal, p.grid.refined(2), ropts);
  return pl;
}

json residual_json(const ilqc::VerificationReport& r) {
  return json{{"stationarity", r.stationarity},
              {"adjoint", r.adjoint},
              {"terminal", r.terminal},
              {"terminal_p1x", r.terminal_p1x},
              {"cost_gap", r.cost_gap}};
}

json residual_json(const ilqc::FbsdeReport& r) {
  return json{{"stationarity_max", r.stationarity_max},
              {"stationarity_mean", r.stationarity_mean},
              {"constraint_max", r.constraint_max},
              {"constraint_mean", r.constraint_mean},
              {"drift_max", r.drift_max},
              {"drift_mean", r.drift_mean},
              {"terminal_max", r.terminal_max},
              {"terminal_mean", r.terminal_mean}};
}

void classify_cmd(const Options& o) {
  const ilqc::LqProblem p = load(o);
  const ilqc::MatrixGrid P = ilqc::integrate_p(p);
  ilqc::ClassifyOptions copts;
  copts.rank_tol = o.tol_rank;
  copts.residual_tol = o.tol_res;
  const ilqc::RegularityReport rep = ilqc::classify(p, P, copts);

  auto os = open_out(o, "classify.csv");
  os << "t,irregular,weight_rank,range_residual\n";
  os.precision(17);
  double worst = 0.0;
  int irregular_nodes = 0;
  for (const auto& nd : rep.nodes) {
    os << nd.t << "," << (nd.irregular ? 1 : 0) << "," << nd.m0 << ","
       << nd.range_residual << "\n";
    worst = std::max(worst, nd.range_residual);
    irregular_nodes += nd.irregular ? 1 : 0;
  }
  std::cout << "verdict: " << (rep.irregular ? "irregular" : "regular")
            << " (" << irregular_nodes << "/" << rep.nodes.size()
            << " nodes, max range residual " << worst << ")\n";
  if (rep.rank_profile_changed)
    std::cout << "warning: weight rank profile changes along the horizon\n";
}

// Monte Carlo run in fixed-size batches so large path counts never hold the
// whole ensemble in memory. Returns the costs plus the first batch of traces
// for the residual sweep.
std::vector<double> run_paths(const ilqc::LqProblem& p,
                              const ilqc::StochController& c,
                              const Options& o,
                              std::vector<ilqc::SimulationTrace>* head) {
  constexpr int kBatch = 1000;
  std::vector<double> costs;
  costs.reserve(static_cast<std::size_t>(o.paths));
  for (int off = 0; off < o.paths; off += kBatch) {
    const int nb = std::min(kBatch, o.paths - off);
    auto batch = ilqc::simulate_em(p, c, o.seed, nb, off);
    for (const auto& tr : batch) costs.push_back(tr.realized_cost);
    if (off == 0 && head) *head = std::move(batch);
  }
  return costs;
}

void solve_stochastic(const ilqc::LqProblem& p, const Pipeline& pl,
                      const Options& o, bool write_controller) {
  ilqc::StochSynthOptions sopts;
  sopts.rank_tol = o.tol_rank;
  sopts.residual_tol = o.tol_res;
  sopts.warn_assumption2 = o.warn_assumption2;
  ilqc::RegularityReport filled = pl.report;
  ilqc::fill_closed_loop(filled, pl.p1, o.tol_rank);
  const ilqc::StochController c =
      ilqc::synthesize_stochastic(p, pl.pbar, pl.p1, filled, sopts);

  std::vector<ilqc::SimulationTrace> head;
  const std::vector<double> costs = run_paths(p, c, o, &head);
  const ilqc::McSummary mc = ilqc::monte_carlo_cost(costs);
  const std::size_t n_res = std::min<std::size_t>(head.size(), 64);
  const std::vector<ilqc::SimulationTrace> sample(head.begin(),
                                                  head.begin() + n_res);
  const ilqc::FbsdeReport fb =
      ilqc::verify_fbsde(p, sample, pl.P, pl.p1, filled, o.tol_rank);

  if (write_controller) {
    auto gains = open_out(o, "controller.csv");
    ilqc::write_matrix_grid_csv(gains, c.feedback_gain);
    if (!c.u1.empty()) {
      auto u1 = open_out(o, "u1.csv");
      write_u1_csv(u1, c.u1_grid, c.u1);
    }
  }
  {
    auto tr = open_out(o, "trace.csv");
    ilqc::write_trace_csv(tr, head.front());
  }
  {
    auto pc = open_out(o, "path_costs.csv");
    pc << "path,cost\n";
    pc.precision(17);
    for (std::size_t i = 0; i < costs.size(); ++i)
      pc << i << "," << costs[i] << "\n";
  }

  json doc{{"kind", c.kind == ilqc::StochController::Kind::irregular
                        ? "irregular"
                        : "regular"},
           {"predicted_cost", c.predicted_cost},
           {"mean_cost", mc.mean},
           {"half_width_95", mc.half_width_95},
           {"n_paths", mc.n_paths},
           {"seed", o.seed},
           {"residuals", residual_json(fb)},
           {"residual_paths", n_res},
           {"p1_terminal", mat_to_json(pl.sel.p1_terminal)},
           {"z_map", c.z_map}};
  open_out(o, "summary.json") << doc.dump(2) << "\n";

  std::cout << "kind: " << doc["kind"].get<std::string>() << "\n"
            << "predicted cost: " << c.predicted_cost << "\n"
            << "Monte Carlo mean: " << mc.mean << " +/- " << mc.half_width_95
            << " (" << mc.n_paths << " paths)\n"
            << "terminal residual (path mean): " << fb.terminal_mean << "\n";
}

void solve_deterministic(const ilqc::LqProblem& p, const Pipeline& pl,
                         const Options& o, bool write_controller) {
  ilqc::SynthOptions sopts;
  sopts.rank_tol = o.tol_rank;
  sopts.residual_tol = o.tol_res;
  const ilqc::Controller c = ilqc::synthesize(p, pl.P, pl.p1, pl.report, sopts);
  const ilqc::SimulationTrace trace = ilqc::simulate(p, c, sopts);
  const ilqc::VerificationReport rep =
      ilqc::verify_optimality(p, trace, pl.P, pl.p1, sopts);

  if (write_controller) {
    auto gains = open_out(o, "controller.csv");
    ilqc::write_matrix_grid_csv(gains, c.feedback_gain);
    if (!c.u1.empty()) {
      auto u1 = open_out(o, "u1.csv");
      write_u1_csv(u1, c.u1_grid, c.u1);
    }
  }
  {
    auto tr = open_out(o, "trace.csv");
    ilqc::write_trace_csv(tr, trace);
  }
  json doc{{"kind", c.kind == ilqc::Controller::Kind::irregular ? "irregular"
                                                                : "regular"},
           {"predicted_cost", rep.predicted_cost},
           {"realized_cost", rep.realized_cost},
           {"terminal_state_norm", trace.states.back().norm()},
           {"residuals", residual_json(rep)},
           {"p1_terminal", mat_to_json(pl.sel.p1_terminal)}};
  open_out(o, "verification.json") << doc.dump(2) << "\n";

  std::cout << "kind: " << doc["kind"].get<std::string>() << "\n"
            << "predicted cost: " << rep.predicted_cost << "\n"
            << "realized cost: " << rep.realized_cost << "\n"
            << "|x(T)|: " << trace.states.back().norm() << "\n"
            << "|P1(T) x(T)|: " << rep.terminal_p1x << "\n";
}

void solve_cmd(const Options& o, bool write_controller) {
  const ilqc::LqProblem p = load(o);
  const Pipeline pl = run_pipeline(p, o);
  if (p.is_stochastic())
    solve_stochastic(p, pl, o, write_controller);
  else
    solve_deterministic(p, pl, o, write_controller);
}

void verify_cmd(const Options& o) {
  const ilqc::LqProblem p = load(o);
  if (p.is_stochastic())
    throw ilqc::ParseError(
        "verify works on deterministic traces; the trace CSV carries no noise "
        "increments, so stochastic paths are verified by solve/simulate");
  if (o.trace.empty())
    throw ilqc::ParseError("no trace file given; pass --trace PATH");
  std::ifstream is(o.trace);
  if (!is) throw ilqc::ParseError("cannot read " + o.trace);
  const ilqc::SimulationTrace trace = ilqc::read_trace_csv(is);

  const Pipeline pl = run_pipeline(p, o);
  ilqc::SynthOptions sopts;
  sopts.rank_tol = o.tol_rank;
  sopts.residual_tol = o.tol_res;
  const ilqc::VerificationReport rep =
      ilqc::verify_optimality(p, trace, pl.P, pl.p1, sopts);
  json doc{{"predicted_cost", rep.predicted_cost},
           {"realized_cost", rep.realized_cost},
           {"residuals", residual_json(rep)}};
  open_out(o, "verification.json") << doc.dump(2) << "\n";
  std::cout << "stationarity: " << rep.stationarity << "\n"
            << "adjoint: " << rep.adjoint << "\n"
            << "terminal: " << rep.terminal << "\n"
            << "|P1(T) x(T)|: " << rep.terminal_p1x << "\n"
            << "cost gap: " << rep.cost_gap << "\n";
}

void oracle_cmd(const Options& o) {
  const ilqc::LqProblem p = load(o);
  json doc;
  if (o.method == "perturb") {
    doc["method"] = "perturbation";
    json runs = json::array();
    for (double eps : o.eps) {
      const ilqc::OracleResult r = ilqc::perturbation_solve(p, eps);
      runs.push_back({{"eps", eps}, {"cost", r.optimal_cost}});
      std::cout << "eps " << eps << ": cost " << r.optimal_cost << "\n";
    }
    doc["runs"] = runs;
  } else if (o.method == "qp") {
    const ilqc::OracleResult r = ilqc::discretized_qp_solve(p, o.qp_steps);
    doc["method"] = "discretized_qp";
    doc["n_steps"] = r.n_steps;
    doc["cost"] = r.optimal_cost;
    std::cout << "qp (" << r.n_steps << " steps): cost " << r.optimal_cost
              << "\n";
  } else {
    throw ilqc::ParseError("unknown oracle method '" + o.method +
                           "'; use perturb or qp");
  }
  open_out(o, "oracle.json") << doc.dump(2) << "\n";
}

// Built-in singular-weight example with a known closed form: scalar state,
// one weighted and one free control, logistic value function. Runs the whole
// pipeline and prints the checkable numbers.
void demo_cmd(const Options& o) {
  ilqc::LqProblem p;
  p.kind = ilqc::ProblemKind::deterministic;
  p.grid = ilqc::TimeGrid(0.0, 1.0, 1000);
  p.x0 = Vec::Ones(1);
  p.A = ilqc::CoefficientFn::constant(Mat::Ones(1, 1));
  p.B = ilqc::CoefficientFn::constant((Mat(1, 2) << 1.0, -1.0).finished());
  p.Q = ilqc::CoefficientFn::constant(Mat::Zero(1, 1));
  p.R = ilqc::CoefficientFn::constant(
      (Mat(2, 2) << 1.0, 0.0, 0.0, 0.0).finished());
  p.H = Mat::Ones(1, 1);

  const Pipeline pl = run_pipeline(p, o);

  std::cout << "value flow vs closed form 2/(1+exp(2(t-T))):\n";
  std::cout << "      t        P(t)     closed     |diff|\n";
  double max_err = 0.0;
  for (int k = 0; k <= p.grid.n_steps; ++k) {
    const double t = p.grid.node(k);
    const double closed = 2.0 / (1.0 + std::exp(2.0 * (t - p.grid.T)));
    const double err = std::abs(pl.P.node(k)(0, 0) - closed);
    max_err = std::max(max_err, err);
    if (k % 250 == 0)
      std::cout << "  " << t << "   " << pl.P.node(k)(0, 0) << "   " << closed
                << "   " << err << "\n";
  }
  std::cout << "max closed-form error: " << max_err << "\n";
  std::cout << "classification: "
            << (pl.report.irregular ? "irregular" : "regular")
            << " (weight rank " << pl.report.m0 << " of "
            << p.control_dim() << ")\n";
  std::cout << "terminal correction P1(T): " << pl.sel.p1_terminal(0, 0)
            << "\n";
  double pbar_max = 0.0;
  for (const Mat& v : pl.pbar.values)
    pbar_max = std::max(pbar_max, v.cwiseAbs().maxCoeff());
  std::cout << "modified flow max |Pbar|: " << pbar_max << "\n";

  const ilqc::Controller c = ilqc::synthesize(p, pl.P, pl.p1, pl.report);
  const ilqc::SimulationTrace trace = ilqc::simulate(p, c);
  const ilqc::VerificationReport rep =
      ilqc::verify_optimality(p, trace, pl.P, pl.p1);
  std::cout << "terminal |x(T)|: " << std::abs(trace.states.back()(0)) << "\n";
  std::cout << "realized cost: " << rep.realized_cost
            << " (predicted " << rep.predicted_cost << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"finite-horizon linear-quadratic solver with singular control "
               "weighting"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool needs_problem) {
    if (needs_problem)
      sub->add_option("--problem", o.problem, "problem JSON file")->required();
    sub->add_option("--out", o.out, "output directory (default .)");
    sub->add_option("--tol-rank", o.tol_rank, "numeric rank tolerance");
    sub->add_option("--tol-res", o.tol_res, "residual tolerance");
  };

  CLI::App* classify = app.add_subcommand(
      "classify", "node-wise regular/irregular report");
  add_common(classify, true);
  classify->callback([&] { classify_cmd(o); });

  CLI::App* solve = app.add_subcommand(
      "solve", "synthesize, simulate, and verify a controller");
  add_common(solve, true);
  solve->add_option("--seed", o.seed, "Monte Carlo seed (stochastic)");
  solve->add_option("--paths", o.paths, "Monte Carlo paths (stochastic)")
      ->check(CLI::PositiveNumber);
  solve->add_flag("--warn-assumption2", o.warn_assumption2,
                  "downgrade the compatibility gate to a warning");
  solve->callback([&] { solve_cmd(o, true); });

  CLI::App* simulate = app.add_subcommand(
      "simulate", "roll out the synthesized controller and summarize costs");
  add_common(simulate, true);
  simulate->add_option("--seed", o.seed, "Monte Carlo seed (stochastic)");
  simulate->add_option("--paths", o.paths, "Monte Carlo paths (stochastic)")
      ->check(CLI::PositiveNumber);
  simulate->add_flag("--warn-assumption2", o.warn_assumption2,
                     "downgrade the compatibility gate to a warning");
  simulate->callback([&] { solve_cmd(o, false); });

  CLI::App* verify = app.add_subcommand(
      "verify", "optimality residuals of a recorded trace");
  add_common(verify, true);
  verify->add_option("--trace", o.trace, "trace CSV file")->required();
  verify->callback([&] { verify_cmd(o); });

  CLI::App* oracle = app.add_subcommand(
      "oracle", "brute-force reference cost (deterministic problems)");
  add_common(oracle, true);
  oracle->add_option("--method", o.method, "perturb or qp (default qp)");
  oracle->add_option("--eps", o.eps, "perturbation sizes for --method perturb");
  oracle->add_option("--steps", o.qp_steps, "control intervals for --method qp");
  oracle->callback([&] { oracle_cmd(o); });

  CLI::App* demo = app.add_subcommand(
      "demo", "run the built-in closed-form example end to end");
  demo->add_option("--out", o.out, "output directory (default .)");
  demo->callback([&] { demo_cmd(o); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ilqc::ErrorCode::parse);
  } catch (const ilqc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

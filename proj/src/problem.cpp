#include "ilqc/problem.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "ilqc/errors.hpp"

namespace ilqc {

using nlohmann::json;

TimeGrid::TimeGrid(double t0_, double T_, int n_steps_)
    : t0(t0_), T(T_), n_steps(n_steps_) {
  if (!(T > t0) || !std::isfinite(t0) || !std::isfinite(T))
    throw Error(ErrorCode::generic, "TimeGrid: need finite T > t0");
  if (n_steps < 2) throw Error(ErrorCode::generic, "TimeGrid: need n_steps >= 2");
}

CoefficientFn CoefficientFn::constant(Mat value) {
  CoefficientFn f;
  f.constant_ = true;
  f.rows_ = value.rows();
  f.cols_ = value.cols();
  f.value_ = std::move(value);
  return f;
}

CoefficientFn CoefficientFn::sampled(const TimeGrid& grid,
                                     std::vector<Mat> samples) {
  if (samples.size() != static_cast<size_t>(grid.nodes()))
    throw InvalidMatrix("CoefficientFn: need one sample per grid node");
  for (const Mat& s : samples) {
    if (s.rows() != samples.front().rows() || s.cols() != samples.front().cols())
      throw InvalidMatrix("CoefficientFn: samples must share dimensions");
  }
  CoefficientFn f;
  f.constant_ = false;
  f.rows_ = samples.front().rows();
  f.cols_ = samples.front().cols();
  f.grid_ = grid;
  f.samples_ = std::move(samples);
  return f;
}

Mat CoefficientFn::operator()(double t) const {
  if (constant_) return value_;
  const double h = grid_.step();
  double s = (t - grid_.t0) / h;
  if (s <= 0.0) return samples_.front();
  if (s >= grid_.n_steps) return samples_.back();
  int i = static_cast<int>(std::floor(s));
  double theta = s - i;
  // snap to the node when t is a node time up to roundoff
  if (theta < 1e-9) return samples_[i];
  if (theta > 1.0 - 1e-9) return samples_[i + 1];
  return (1.0 - theta) * samples_[i] + theta * samples_[i + 1];
}

namespace {

void check_dims(const CoefficientFn& f, Eigen::Index r, Eigen::Index c,
                const char* name, ValidationReport& rep) {
  if (f.empty()) {
    rep.violations.push_back(std::string(name) + ": missing coefficient");
    return;
  }
  if (f.rows() != r || f.cols() != c) {
    std::ostringstream os;
    os << name << ": expected " << r << "x" << c << ", got " << f.rows() << "x"
       << f.cols();
    rep.violations.push_back(os.str());
  }
}

void check_sym_psd(const Mat& m, double tol, const char* name, double t,
                   bool require_psd, ValidationReport& rep) {
  const double scale = std::max(1.0, m.norm());
  if ((m - m.transpose()).norm() > tol * scale) {
    std::ostringstream os;
    os << name << " not symmetric at t=" << t;
    rep.violations.push_back(os.str());
    return;
  }
  if (!require_psd) return;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  if (es.eigenvalues().minCoeff() < -tol * scale) {
    std::ostringstream os;
    os << name << " not positive semidefinite at t=" << t
       << " (min eigenvalue " << es.eigenvalues().minCoeff() << ")";
    rep.violations.push_back(os.str());
  }
}

void check_weight(const CoefficientFn& f, const TimeGrid& grid, double tol,
                  const char* name, ValidationReport& rep) {
  if (f.empty()) return;  // dimension check already complained
  if (f.is_constant()) {
    check_sym_psd(f(grid.t0), tol, name, grid.t0, true, rep);
    return;
  }
  const TimeGrid& g = f.sample_grid();
  for (int i = 0; i < g.nodes(); ++i)
    check_sym_psd(f.samples()[i], tol, name, g.node(i), true, rep);
}

}  // namespace

ValidationReport validate(const LqProblem& p, double tol) {
  ValidationReport rep;
  const Eigen::Index n = p.state_dim();
  const Eigen::Index m = p.control_dim();
  if (n == 0) rep.violations.push_back("A: missing coefficient");
  if (p.x0.size() != n)
    rep.violations.push_back("x0: size does not match state dimension");

  check_dims(p.A, n, n, "A", rep);
  check_dims(p.B, n, m, "B", rep);
  check_dims(p.Q, n, n, "Q", rep);
  check_dims(p.R, m, m, "R", rep);
  if (p.H.rows() != n || p.H.cols() != n)
    rep.violations.push_back("H: expected n x n terminal weight");
  else
    check_sym_psd(p.H, tol, "H", p.grid.T, true, rep);

  if (p.is_stochastic()) {
    check_dims(p.Abar, n, n, "Abar", rep);
    check_dims(p.Bbar, n, m, "Bbar", rep);
  } else {
    if (!p.Abar.empty() || !p.Bbar.empty())
      rep.violations.push_back(
          "deterministic problem must not carry noise coefficients");
  }

  check_weight(p.Q, p.grid, tol, "Q", rep);
  check_weight(p.R, p.grid, tol, "R", rep);
  return rep;
}

namespace {

void check_alignment(const LqProblem& p, const SimulationTrace& tr) {
  const int nodes = p.grid.nodes();
  if (tr.times.size() != static_cast<size_t>(nodes) ||
      tr.states.size() != static_cast<size_t>(nodes) ||
      tr.controls.size() != static_cast<size_t>(nodes))
    throw TraceMismatch("trace: node count does not match problem grid");
  for (int i = 0; i < nodes; ++i) {
    if (std::abs(tr.times[i] - p.grid.node(i)) >
        1e-9 * (1.0 + std::abs(p.grid.node(i))))
      throw TraceMismatch("trace: node times do not match problem grid");
  }
  for (int i = 0; i < nodes; ++i) {
    if (tr.states[i].size() != p.state_dim() ||
        tr.controls[i].size() != p.control_dim())
      throw TraceMismatch("trace: state/control dimensions do not match");
  }
}

double stage_cost(const LqProblem& p, double t, const Vec& x, const Vec& u) {
  return x.dot(p.Q(t) * x) + u.dot(p.R(t) * u);
}

}  // namespace

double evaluate_cost(const LqProblem& p, const SimulationTrace& tr) {
  check_alignment(p, tr);
  const double h = p.grid.step();
  double integral = 0.0;
  for (int i = 0; i < p.grid.nodes(); ++i) {
    const double w = (i == 0 || i == p.grid.n_steps) ? 0.5 * h : h;
    integral += w * stage_cost(p, p.grid.node(i), tr.states[i], tr.controls[i]);
  }
  const Vec& xT = tr.states.back();
  return integral + xT.dot(p.H * xT);
}

void fill_running_cost(const LqProblem& p, SimulationTrace& tr) {
  check_alignment(p, tr);
  const double h = p.grid.step();
  tr.cost_to_date.assign(tr.times.size(), 0.0);
  double acc = 0.0;
  double prev = stage_cost(p, p.grid.node(0), tr.states[0], tr.controls[0]);
  for (int i = 1; i < p.grid.nodes(); ++i) {
    const double cur = stage_cost(p, p.grid.node(i), tr.states[i], tr.controls[i]);
    acc += 0.5 * h * (prev + cur);
    tr.cost_to_date[i] = acc;
    prev = cur;
  }
  const Vec& xT = tr.states.back();
  tr.realized_cost = acc + xT.dot(p.H * xT);
  tr.cost_to_date.back() = tr.realized_cost;
}

namespace {

Mat parse_matrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty())
    throw ParseError(path + ": expected a non-empty array of rows");
  const size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw ParseError(path + ": rows must be non-empty arrays");
  Mat m(j.size(), cols);
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw ParseError(path + ": ragged rows");
    for (size_t k = 0; k < cols; ++k) {
      if (!j[i][k].is_number())
        throw ParseError(path + ": entries must be numbers");
      m(i, k) = j[i][k].get<double>();
    }
  }
  return m;
}

CoefficientFn parse_coefficient(const json& j, const TimeGrid& grid,
                                const std::string& path) {
  if (j.is_array()) return CoefficientFn::constant(parse_matrix(j, path));
  if (!j.is_object())
    throw ParseError(path + ": expected matrix, {\"const\":..} or {\"samples\":..}");
  if (j.contains("const"))
    return CoefficientFn::constant(parse_matrix(j["const"], path + ".const"));
  if (j.contains("samples")) {
    const json& s = j["samples"];
    if (!s.is_array())
      throw ParseError(path + ".samples: expected an array of matrices");
    if (s.size() != static_cast<size_t>(grid.nodes())) {
      std::ostringstream os;
      os << path << ".samples: expected " << grid.nodes() << " samples, got "
         << s.size();
      throw ParseError(os.str());
    }
    std::vector<Mat> samples;
    samples.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i)
      samples.push_back(parse_matrix(s[i], path + ".samples[" + std::to_string(i) + "]"));
    return CoefficientFn::sampled(grid, std::move(samples));
  }
  throw ParseError(path + ": need \"const\" or \"samples\"");
}

json matrix_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(row);
  }
  return rows;
}

json coefficient_to_json(const CoefficientFn& f, const TimeGrid& grid) {
  if (f.is_constant()) return json{{"const", matrix_to_json(f(grid.t0))}};
  json samples = json::array();
  // serialize on the problem grid regardless of the internal sample grid
  for (int i = 0; i < grid.nodes(); ++i)
    samples.push_back(matrix_to_json(f(grid.node(i))));
  return json{{"samples", samples}};
}

}  // namespace

LqProblem load_problem(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("problem file: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("problem file: expected a JSON object");

  LqProblem p;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "deterministic")
      p.kind = ProblemKind::deterministic;
    else if (kind == "stochastic")
      p.kind = ProblemKind::stochastic;
    else
      throw ParseError("kind: expected \"deterministic\" or \"stochastic\"");

    const double t0 = j.at("t0").get<double>();
    const double T = j.at("T").get<double>();
    const int n_steps = j.value("n_steps", 2000);
    try {
      p.grid = TimeGrid(t0, T, n_steps);
    } catch (const Error& e) {
      throw ParseError(std::string("grid: ") + e.what());
    }

    const json& jx = j.at("x0");
    if (!jx.is_array() || jx.empty())
      throw ParseError("x0: expected a non-empty array");
    p.x0.resize(jx.size());
    for (size_t i = 0; i < jx.size(); ++i) {
      if (!jx[i].is_number()) throw ParseError("x0: entries must be numbers");
      p.x0(i) = jx[i].get<double>();
    }

    p.A = parse_coefficient(j.at("A"), p.grid, "A");
    p.B = parse_coefficient(j.at("B"), p.grid, "B");
    p.Q = parse_coefficient(j.at("Q"), p.grid, "Q");
    p.R = parse_coefficient(j.at("R"), p.grid, "R");
    if (p.is_stochastic()) {
      p.Abar = parse_coefficient(j.at("Abar"), p.grid, "Abar");
      p.Bbar = parse_coefficient(j.at("Bbar"), p.grid, "Bbar");
    }
    const json& jh = j.at("H");
    p.H = jh.is_object() ? parse_matrix(jh.at("const"), "H.const")
                         : parse_matrix(jh, "H");
  } catch (const json::exception& e) {
    throw ParseError(std::string("problem file: ") + e.what());
  }

  const ValidationReport rep = validate(p);
  if (!rep.ok()) {
    std::string msg = "problem file: ";
    for (size_t i = 0; i < rep.violations.size(); ++i)
      msg += (i ? "; " : "") + rep.violations[i];
    throw ParseError(msg);
  }
  return p;
}

LqProblem load_problem_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open problem file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_problem(buf.str());
}

std::string save_problem(const LqProblem& p) {
  json j;
  j["kind"] = p.is_stochastic() ? "stochastic" : "deterministic";
  j["t0"] = p.grid.t0;
  j["T"] = p.grid.T;
  j["n_steps"] = p.grid.n_steps;
  json x0 = json::array();
  for (Eigen::Index i = 0; i < p.x0.size(); ++i) x0.push_back(p.x0(i));
  j["x0"] = x0;
  j["A"] = coefficient_to_json(p.A, p.grid);
  j["B"] = coefficient_to_json(p.B, p.grid);
  j["Q"] = coefficient_to_json(p.Q, p.grid);
  j["R"] = coefficient_to_json(p.R, p.grid);
  if (p.is_stochastic()) {
    j["Abar"] = coefficient_to_json(p.Abar, p.grid);
    j["Bbar"] = coefficient_to_json(p.Bbar, p.grid);
  }
  j["H"] = matrix_to_json(p.H);
  return j.dump(2);
}

void save_problem_file(const LqProblem& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::generic, "cannot write problem file: " + path);
  out << save_problem(p) << "\n";
}

void write_trace_csv(std::ostream& os, const SimulationTrace& tr) {
  if (tr.states.empty()) throw TraceMismatch("write_trace_csv: empty trace");
  const Eigen::Index n = tr.states.front().size();
  const Eigen::Index m = tr.controls.front().size();
  os << "t";
  for (Eigen::Index i = 0; i < n; ++i) os << ",x_" << i;
  for (Eigen::Index i = 0; i < m; ++i) os << ",u_" << i;
  os << ",cost_to_date\n";
  os << std::setprecision(17);
  for (size_t k = 0; k < tr.times.size(); ++k) {
    os << tr.times[k];
    for (Eigen::Index i = 0; i < n; ++i) os << "," << tr.states[k](i);
    for (Eigen::Index i = 0; i < m; ++i) os << "," << tr.controls[k](i);
    os << "," << (k < tr.cost_to_date.size() ? tr.cost_to_date[k] : 0.0);
    os << "\n";
  }
}

SimulationTrace read_trace_csv(std::istream& is) {
  std::string header;
  if (!std::getline(is, header))
    throw ParseError("trace csv: missing header line");
  Eigen::Index n = 0, m = 0;
  {
    std::stringstream hs(header);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(hs, field, ',')) fields.push_back(field);
    if (fields.empty() || fields.front() != "t" ||
        fields.back() != "cost_to_date")
      throw ParseError("trace csv: bad header");
    for (const std::string& f : fields) {
      if (f.rfind("x_", 0) == 0) ++n;
      if (f.rfind("u_", 0) == 0) ++m;
    }
    if (fields.size() != static_cast<size_t>(2 + n + m))
      throw ParseError("trace csv: bad header");
  }

  SimulationTrace tr;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError("trace csv: non-numeric cell '" + cell + "'");
      }
    }
    if (row.size() != static_cast<size_t>(2 + n + m))
      throw ParseError("trace csv: row width does not match header");
    tr.times.push_back(row[0]);
    Vec x(n), u(m);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = row[1 + i];
    for (Eigen::Index i = 0; i < m; ++i) u(i) = row[1 + n + i];
    tr.states.push_back(x);
    tr.controls.push_back(u);
    tr.cost_to_date.push_back(row[1 + n + m]);
  }
  if (tr.times.empty()) throw ParseError("trace csv: no data rows");
  tr.realized_cost = tr.cost_to_date.back();
  return tr;
}

}  // namespace ilqc

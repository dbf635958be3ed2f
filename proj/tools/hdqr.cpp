// hdqr: fitting, inference, tests, simulations and critical values from the
// command line. Exit codes: 0 ok, 2 input, 3 solver, 4 bandwidth, 5 singular.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hdqr/dataset.hpp"
#include "hdqr/inference.hpp"
#include "hdqr/io.hpp"
#include "hdqr/precision.hpp"
#include "hdqr/quantile_fit.hpp"
#include "hdqr/rank_scores.hpp"
#include "hdqr/simulate.hpp"

namespace {

using namespace hdqr;
using hdqr::io::fmt;
using hdqr::io::InputError;
using json = hdqr::io::json;

enum Exit { kOk = 0, kInput = 2, kSolver = 3, kBandwidth = 4, kSingular = 5 };

struct SolverFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- shared options

struct Common {
  std::string data;
  std::string tau;
  std::string tau_grid;
  double lambda0 = -1.0;
  double c1 = 2.0;
  std::string out = ".";
  int threads = 0;
};

struct Estimation {
  double c2 = kDefaultC2;
  double c3 = kDefaultC3;
  double c4 = kDefaultC4;
  double h = 0.0;
  double scale_epsilon = 0.05;
  double scale_step = 0.005;
  bool corrected = false;
  bool strict_window = false;
  std::string known_sigma;
};

void add_common(CLI::App* app, Common& c, bool need_grid = true) {
  app->add_option("--data", c.data, "Dataset CSV (header y,x1,...,xp)")->required();
  if (need_grid) {
    app->add_option("--tau", c.tau, "Single quantile level");
    app->add_option("--tau-grid", c.tau_grid, "Grid a:b:step");
  }
  app->add_option("--lambda0", c.lambda0, "Penalty level (default c1 sqrt(log p / n))");
  app->add_option("--c1", c.c1, "Constant of the default penalty level");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--threads", c.threads, "Worker cap (falls back to HDQR_THREADS)");
}

void add_estimation(CLI::App* app, Estimation& e) {
  app->add_option("--c2", e.c2, "Precision gamma constant");
  app->add_option("--c3", e.c3, "Precision L constant");
  app->add_option("--c4", e.c4, "Bandwidth constant");
  app->add_option("--h", e.h, "Fixed sparsity bandwidth (multiple of the scale step)");
  app->add_option("--scale-epsilon", e.scale_epsilon, "Left edge of the scale grid");
  app->add_option("--scale-step", e.scale_step, "Step of the scale grid");
  app->add_flag("--corrected", e.corrected, "Use the Richardson-corrected sparsity estimator");
  app->add_flag("--strict-window", e.strict_window, "Reject bandwidth windows that contain 0.5");
  app->add_option("--known-sigma", e.known_sigma, "Analytic sparsity: normal, t<df>, uniform");
}

TauGrid levels(const Common& c) {
  if (!c.tau.empty() && !c.tau_grid.empty()) throw InputError("give --tau or --tau-grid, not both");
  if (c.tau_grid.size()) return io::parse_grid(c.tau_grid);
  if (c.tau.size()) return io::parse_grid(c.tau);
  throw InputError("one of --tau or --tau-grid is required");
}

double lambda_of(const Common& c, const Dataset& d) {
  if (c.lambda0 >= 0.0) return c.lambda0;
  if (!(c.c1 > 0.0)) throw InputError("--c1 must be positive");
  return default_lambda0(d.n(), d.p(), c.c1);
}

/// `eK` or a comma list of `j=v`.
VectorXd parse_loading(const std::string& spec, Index dim) {
  VectorXd v = VectorXd::Zero(dim);
  auto index = [&](const std::string& s) {
    const double j = io::parse_number(s, "loading index");
    if (j != std::floor(j) || j < 0 || j >= static_cast<double>(dim))
      throw InputError("loading '" + spec + "': index " + s + " out of range 0.." + std::to_string(dim - 1));
    return static_cast<Index>(j);
  };
  const std::string t = io::trim(spec);
  if (!t.empty() && t[0] == 'e' && t.find('=') == std::string::npos) {
    v[index(t.substr(1))] = 1.0;
    return v;
  }
  for (const auto& part : io::split(t, ',')) {
    const auto kv = io::split(part, '=');
    if (kv.size() != 2) throw InputError("loading '" + spec + "' must be eK or j=v,...");
    v[index(kv[0])] += io::parse_number(kv[1], "loading value");
  }
  if (v.isZero()) throw InputError("loading '" + spec + "' is zero");
  return v;
}

std::vector<Index> support_of(const std::vector<VectorXd>& loads) {
  std::set<Index> rows;
  for (const auto& v : loads)
    for (Index j = 0; j < v.size(); ++j)
      if (v[j] != 0.0) rows.insert(j);
  return {rows.begin(), rows.end()};
}

std::optional<ErrorSpec> known_error(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "normal" || s == "gaussian") return ErrorSpec{ErrorKind::Gaussian, 1};
  if (s == "uniform") return ErrorSpec{ErrorKind::Uniform, 0};
  if (s.size() > 1 && s[0] == 't') {
    const double df = io::parse_number(s.substr(1), "--known-sigma");
    if (df < 1 || df != std::floor(df)) throw InputError("--known-sigma: t needs an integer df >= 1");
    return ErrorSpec{ErrorKind::StudentT, static_cast<int>(df)};
  }
  throw InputError("--known-sigma must be normal, uniform or t<df>");
}

/// Fits along the scale grid, estimated precision rows, bandwidth, and the
/// debiased path at the requested levels.
struct Pipeline {
  Dataset data;
  TauGrid levels;
  TauGrid scale;
  Sweep sweep;
  double h = 0.0;
  Index s_hat = 0;
  PrecisionEstimate D;
  DebiasedPath dp;
  std::string mode = "estimated";
};

void check_levels_on_grid(const TauGrid& T, const TauGrid& scale) {
  for (double t : T.points)
    if (scale.index_of(t) < 0)
      throw InputError("tau " + fmt(t) + " is not on the scale grid (epsilon " + fmt(scale.front()) + ", step " +
                       fmt(scale.step) + ")");
}

TauGrid scale_grid_of(const Estimation& e) {
  try {
    return TauGrid::symmetric(e.scale_epsilon, e.scale_step);
  } catch (const std::invalid_argument& ex) {
    throw InputError(ex.what());
  }
}

Pipeline run_pipeline(const Common& c, const Estimation& e, const std::vector<Index>& rows) {
  Pipeline pl;
  pl.data = io::read_dataset(c.data);
  pl.levels = levels(c);
  pl.scale = scale_grid_of(e);
  check_levels_on_grid(pl.levels, pl.scale);
  if (!(e.c2 > 0.0 && e.c3 > 0.0 && e.c4 > 0.0)) throw InputError("--c2, --c3, --c4 must be positive");
  if (e.h < 0.0) throw InputError("--h must be positive");
  for (Index j : rows)
    if (j > pl.data.p()) throw InputError("coordinate " + std::to_string(j) + " exceeds p = " + std::to_string(pl.data.p()));
  const auto known = known_error(e.known_sigma);
  const double lam = lambda_of(c, pl.data);

  try {
    pl.sweep = sweep_penalized(pl.data, pl.scale, lam);
  } catch (const std::runtime_error& ex) {
    throw SolverFailure(ex.what());
  }
  const Index mid = pl.scale.index_of(0.5);
  pl.s_hat = 0;
  for (Index j = 1; j <= pl.data.p(); ++j)
    if (pl.sweep.path.fits[static_cast<std::size_t>(mid)].beta[j] != 0.0) ++pl.s_hat;
  pl.s_hat = std::max<Index>(pl.s_hat, 1);
  try {
    pl.h = e.h > 0.0 ? e.h : default_bandwidth(pl.data.n(), pl.data.p(), pl.s_hat, pl.scale, pl.levels.points, e.c4);
  } catch (const std::invalid_argument& ex) {
    throw BandwidthError(ex.what(), pl.levels.front());
  }

  const Tuning tn = default_tuning(pl.data, e.c2, e.c3);
  try {
    pl.D = estimate_precision_rows(pl.data, rows, tn.gamma, tn.L);
  } catch (const EscalationError& ex) {
    throw SolverFailure(ex.what());
  }

  QuantilePath sub;
  sub.grid = pl.levels;
  for (double t : pl.levels.points) sub.fits.push_back(pl.sweep.path.fits[static_cast<std::size_t>(pl.scale.index_of(t))]);
  DebiasOptions opt;
  opt.corrected = e.corrected;
  opt.allow_straddle = !e.strict_window;
  if (known) {
    opt.mode = SparsityMode::Known;
    pl.mode = "known";
    opt.known = [k = *known](double t) { return k.sparsity(t); };
  }
  pl.dp = debias_path(sub, pl.D, pl.sweep.scale, pl.h, pl.data, opt);
  return pl;
}

std::string debiased_csv(const Pipeline& pl) {
  std::ostringstream os;
  os << "tau";
  for (Index j : pl.D.rows) os << ",beta_check_" << j << ",beta_hat_" << j;
  os << "\n";
  for (std::size_t k = 0; k < pl.dp.grid.points.size(); ++k) {
    os << fmt(pl.dp.grid.points[k]);
    for (Index j : pl.D.rows) os << "," << fmt(pl.dp.beta_check[k][j]) << "," << fmt(pl.dp.beta_hat[k][j]);
    os << "\n";
  }
  return os.str();
}

std::string sparsity_csv(const Pipeline& pl) {
  std::ostringstream os;
  os << "tau,sparsity,h,mode,floored\n";
  for (std::size_t k = 0; k < pl.dp.grid.points.size(); ++k)
    os << fmt(pl.dp.grid.points[k]) << "," << fmt(pl.dp.sparsity[static_cast<Index>(k)]) << "," << fmt(pl.h) << ","
       << pl.mode << "," << (pl.dp.floored[k] ? 1 : 0) << "\n";
  return os.str();
}

json precision_meta(const Pipeline& pl, const std::vector<std::string>& warnings) {
  json j;
  j["gamma"] = pl.D.gamma;
  j["L"] = pl.D.L;
  j["rows"] = pl.D.rows;
  j["escalated_columns"] = pl.D.escalated();
  j["columns"] = json::array();
  for (const auto& [col, rec] : pl.D.columns)
    j["columns"].push_back({{"column", col}, {"gamma", rec.gamma}, {"L", rec.L}, {"escalations", rec.escalations}});
  j["h"] = pl.h;
  j["s_hat"] = pl.s_hat;
  j["sparsity_mode"] = pl.mode;
  j["warnings"] = warnings;
  return j;
}

std::string interval_rows(const std::vector<Interval>& ivs, const CriticalValue& cv, const std::string& lead = "",
                          const std::string& lead_value = "") {
  std::ostringstream os;
  for (const auto& iv : ivs) {
    if (!lead.empty()) os << lead_value << ",";
    os << fmt(iv.tau) << "," << fmt(iv.centre) << "," << fmt(iv.lower) << "," << fmt(iv.upper) << ","
       << fmt(iv.half_width) << "," << fmt(cv.value) << "," << fmt(cv.alpha) << "," << fmt(iv.sandwich) << "\n";
  }
  return os.str();
}

void collect_warnings(const std::vector<Interval>& ivs, std::vector<std::string>& w) {
  for (const auto& iv : ivs)
    if (iv.sandwich_clamped) w.push_back("negative sandwich at tau " + fmt(iv.tau) + "; absolute value used");
}

// ---------------------------------------------------------------- commands

int cmd_fit(const Common& c) {
  const Dataset data = io::read_dataset(c.data);
  const TauGrid grid = levels(c);
  const double lam = lambda_of(c, data);
  QuantilePath path;
  try {
    path = fit_path(data, grid, lam);
  } catch (const std::runtime_error& ex) {
    throw SolverFailure(ex.what());
  }
  std::ostringstream csv;
  csv << "tau";
  for (Index j = 0; j <= data.p(); ++j) csv << ",beta_" << j;
  csv << "\n";
  json meta;
  meta["lambda0"] = lam;
  meta["n"] = data.n();
  meta["p"] = data.p();
  meta["fits"] = json::array();
  for (const auto& fit : path.fits) {
    if (fit.lp_status != lp::Status::Optimal)
      throw SolverFailure("fit at tau " + fmt(fit.tau) + " ended with status " + lp::to_string(fit.lp_status));
    csv << fmt(fit.tau);
    for (Index j = 0; j <= data.p(); ++j) csv << "," << fmt(fit.beta[j]);
    csv << "\n";
    meta["fits"].push_back({{"tau", fit.tau},
                            {"objective", fit.objective},
                            {"status", lp::to_string(fit.lp_status)},
                            {"iterations", fit.iterations},
                            {"penalties", std::vector<double>(fit.penalties.begin(), fit.penalties.end())}});
  }
  io::OutputSet out(c.out);
  out.add("beta_path.csv", csv.str());
  out.add("fit_meta.json", meta.dump(2) + "\n");
  for (const auto& f : out.commit()) std::cout << f << "\n";
  return kOk;
}

struct InferArgs {
  std::string x;
  std::string e;
  std::vector<std::string> w;
  bool band = false;
  bool simultaneous = false;
  int d = 1;
  double alpha = -1.0;
  std::uint64_t seed = kBridgeSeed;
  long paths = kBridgePaths;
  long steps = kBridgeSteps;
};

int cmd_infer(const Common& c, const Estimation& e, const InferArgs& a) {
  // Loadings need p, so peek at the header before anything heavy.
  const Dataset probe = io::read_dataset(c.data);
  const Index dim = probe.p() + 1;
  std::vector<VectorXd> loads;
  if (a.simultaneous) {
    if (a.w.empty()) throw InputError("--simultaneous needs at least one --w loading");
    for (const auto& s : a.w) loads.push_back(parse_loading(s, dim));
    if (a.d < 1) throw InputError("--d must be at least 1");
  } else if (a.band) {
    if (a.e.empty()) throw InputError("--band needs --e");
    loads.push_back(parse_loading(a.e, dim));
  } else {
    if (a.x.empty()) throw InputError("--x is required for a pointwise interval");
    loads.push_back(parse_loading(a.x, dim));
  }
  const bool banded = a.band || a.simultaneous;
  const double alpha = a.alpha > 0.0 ? a.alpha : (banded ? 0.05 : 0.025);
  if (!banded && !(alpha > 0.0 && alpha < 0.5)) throw InputError("--alpha must lie in (0, 0.5)");
  if (banded && !(alpha > 0.0 && alpha < 1.0)) throw InputError("--alpha must lie in (0, 1)");
  if (a.simultaneous && (a.paths < 1 || a.steps < 2)) throw InputError("--paths >= 1 and --steps >= 2 required");

  const Pipeline pl = run_pipeline(c, e, support_of(loads));
  std::vector<std::string> warnings;
  io::OutputSet out(c.out);
  out.add("debiased_path.csv", debiased_csv(pl));
  out.add("sparsity_path.csv", sparsity_csv(pl));
  const std::string header = "tau,estimate,lower,upper,half_width,critical,alpha,sandwich\n";
  if (!banded) {
    std::vector<Interval> ivs;
    for (double t : pl.levels.points) ivs.push_back(pointwise_ci(pl.dp, loads[0], t, alpha, pl.D));
    collect_warnings(ivs, warnings);
    out.add("ci.csv", header + interval_rows(ivs, normal_critical(alpha)));
  } else if (!a.simultaneous) {
    const Band b = uniform_band(pl.dp, loads[0], pl.levels, alpha, pl.D);
    collect_warnings(b.intervals, warnings);
    out.add("band.csv", header + interval_rows(b.intervals, b.critical));
  } else {
    BridgeConfig mc;
    mc.seed = a.seed;
    mc.n_paths = a.paths;
    mc.n_steps = a.steps;
    mc.threads = c.threads;
    const SimultaneousBand sb = simultaneous_band(pl.dp, loads, pl.levels, alpha, a.d, pl.D, mc);
    std::string body;
    for (std::size_t k = 0; k < sb.bands.size(); ++k) {
      collect_warnings(sb.bands[k].intervals, warnings);
      body += interval_rows(sb.bands[k].intervals, sb.critical, "loading", std::to_string(k));
    }
    out.add("band.csv", "loading," + header + body);
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  out.add("precision_meta.json", precision_meta(pl, warnings).dump(2) + "\n");
  for (const auto& f : out.commit()) std::cout << f << "\n";
  return kOk;
}

struct TestArgs {
  std::vector<std::string> coefs;
  std::string structural;
  std::string hypothesis;
  bool sup = false;
  double alpha = 0.05;
  std::uint64_t seed = kBridgeSeed;
  long paths = kBridgePaths;
  long steps = kBridgeSteps;
};

/// Rows of M and r from `--coef j=value`, `--structural k,j` or a CSV with
/// header r,c0,...,cp.
std::pair<MatrixXd, VectorXd> hypothesis_of(const TestArgs& a, Index dim) {
  std::vector<VectorXd> rows;
  std::vector<double> rhs;
  for (const auto& s : a.coefs) {
    const auto kv = io::split(s, '=');
    if (kv.size() != 2) throw InputError("--coef '" + s + "' must look like j=value");
    const double j = io::parse_number(kv[0], "--coef index");
    if (j != std::floor(j) || j < 0 || j >= static_cast<double>(dim)) throw InputError("--coef index out of range");
    VectorXd row = VectorXd::Zero(dim);
    row[static_cast<Index>(j)] = 1.0;
    rows.push_back(row);
    rhs.push_back(io::parse_number(kv[1], "--coef value"));
  }
  if (!a.structural.empty()) {
    const auto kj = io::split(a.structural, ',');
    if (kj.size() != 2) throw InputError("--structural must look like k,j");
    const double k = io::parse_number(kj[0], "--structural"), j = io::parse_number(kj[1], "--structural");
    if (k != std::floor(k) || j != std::floor(j) || k < 0 || j < 0 || k >= dim || j >= dim || k == j)
      throw InputError("--structural needs two distinct coordinates in range");
    const auto [M, r] = structural_hypothesis(dim, static_cast<Index>(k), static_cast<Index>(j));
    rows.push_back(M.row(0).transpose());
    rhs.push_back(r[0]);
  }
  if (!a.hypothesis.empty()) {
    std::ifstream in(a.hypothesis);
    if (!in) throw InputError("cannot open '" + a.hypothesis + "'");
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 1 || io::trim(line).empty()) continue;
      const auto f = io::split(io::trim(line), ',');
      if (static_cast<Index>(f.size()) != dim + 1)
        throw InputError(a.hypothesis + ": line " + std::to_string(lineno) + ": expected " + std::to_string(dim + 1) +
                             " fields",
                         lineno);
      VectorXd row(dim);
      const std::string where = a.hypothesis + ": line " + std::to_string(lineno);
      rhs.push_back(io::parse_number(f[0], where));
      for (Index j = 0; j < dim; ++j) row[j] = io::parse_number(f[static_cast<std::size_t>(j + 1)], where);
      rows.push_back(row);
    }
  }
  if (rows.empty()) throw InputError("no hypothesis: give --coef, --structural or --hypothesis");
  MatrixXd M(static_cast<Index>(rows.size()), dim);
  for (std::size_t k = 0; k < rows.size(); ++k) M.row(static_cast<Index>(k)) = rows[k].transpose();
  return {M, Eigen::Map<VectorXd>(rhs.data(), static_cast<Index>(rhs.size()))};
}

int cmd_test(const Common& c, const Estimation& e, const TestArgs& a) {
  const Dataset probe = io::read_dataset(c.data);
  const auto [M, r] = hypothesis_of(a, probe.p() + 1);
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw InputError("--alpha must lie in (0, 1)");
  if (a.paths < 1 || a.steps < 2) throw InputError("--paths >= 1 and --steps >= 2 required");
  const TauGrid T = levels(c);
  if (!a.sup && T.size() != 1) throw InputError("the pointwise test needs a single --tau; use --sup for a grid");
  std::vector<VectorXd> loads;
  for (Index k = 0; k < M.rows(); ++k) loads.push_back(M.row(k).transpose());
  const Pipeline pl = run_pipeline(c, e, support_of(loads));
  TestResult res;
  if (a.sup) {
    BridgeConfig mc;
    mc.seed = a.seed;
    mc.n_paths = a.paths;
    mc.n_steps = a.steps;
    mc.threads = c.threads;
    res = sup_wald(pl.dp, M, r, T, pl.D, a.alpha, mc);
  } else {
    res = wald_stat(pl.dp, M, r, T.front(), pl.D, a.alpha);
  }
  json j;
  j["test"] = a.sup ? "sup-wald" : "wald";
  j["statistic"] = res.statistic;
  j["critical_value"] = io::to_json(res.critical);
  j["p_value"] = res.p_value;
  j["reject"] = res.reject;
  j["tau_lo"] = res.tau_lo;
  j["tau_hi"] = res.tau_hi;
  j["tau_max"] = res.tau_max;
  j["d"] = M.rows();
  j["M"] = json::array();
  for (Index k = 0; k < M.rows(); ++k) {
    json row = json::object();
    for (Index col = 0; col < M.cols(); ++col)
      if (M(k, col) != 0.0) row[std::to_string(col)] = M(k, col);
    j["M"].push_back(row);
  }
  j["r"] = std::vector<double>(r.begin(), r.end());
  j["h"] = pl.h;
  j["sparsity_mode"] = pl.mode;
  j["sparsity"] = std::vector<double>(pl.dp.sparsity.begin(), pl.dp.sparsity.end());
  io::OutputSet out(c.out);
  out.add("test.json", j.dump(2) + "\n");
  for (const auto& f : out.commit()) std::cout << f << "\n";
  return kOk;
}

struct SimArgs {
  std::string preset;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<Index> reps;
  std::string out = ".";
  int threads = 0;
};

int cmd_simulate(const SimArgs& a) {
  if (a.preset.empty() == a.config.empty()) throw InputError("give exactly one of --preset or --config");
  SimConfig cfg;
  try {
    if (!a.preset.empty()) {
      cfg = preset(a.preset);
    } else {
      std::ifstream in(a.config);
      if (!in) throw InputError("cannot open '" + a.config + "'");
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& ex) {
        throw InputError(a.config + ": " + ex.what());
      }
      cfg = io::config_from_json(j);
    }
    if (a.seed) cfg.seed = *a.seed;
    if (a.reps) cfg.n_reps = *a.reps;
    if (a.threads > 0) cfg.threads = a.threads;
    cfg.validate();
  } catch (const InputError&) {
    throw;
  } catch (const std::invalid_argument& ex) {
    throw InputError(ex.what());
  }

  io::OutputSet out(a.out);
  if (!cfg.ladder.empty()) {
    const RemainderDiagnostic rd = remainder_diagnostic(cfg);
    out.add("remainder.csv", io::remainder_csv(rd));
    out.add("remainder_values.csv", io::remainder_values_csv(rd));
    json j;
    j["config"] = io::config_to_json(cfg);
    j["rows"] = json::array();
    for (const auto& row : rd.rows)
      j["rows"].push_back({{"n", row.n}, {"p", row.p}, {"mode", row.mode}, {"failed", row.failed}, {"median", row.median}});
    out.add("summary.json", j.dump(2) + "\n");
    std::printf("Median sup remainder over tau in {");
    for (std::size_t k = 0; k < cfg.taus.size(); ++k) std::printf("%s%g", k ? ", " : "", cfg.taus[k]);
    std::printf("}\n%8s %8s %10s %12s\n", "n", "p", "mode", "median");
    for (const auto& row : rd.rows)
      std::printf("%8ld %8ld %10s %12.5f\n", static_cast<long>(row.n), static_cast<long>(row.p), row.mode.c_str(),
                  row.median);
  } else {
    CoverageReport rep;
    try {
      rep = run_coverage(cfg);
    } catch (const FailureBudgetExceeded& ex) {
      throw SolverFailure(ex.what());
    }
    out.add("coverage_report.csv", io::coverage_csv(rep));
    out.add("replications.csv", io::replications_csv(rep));
    out.add("failures.csv", io::failures_csv(rep));
    if (cfg.tests) {
      out.add("tests.csv", io::tests_csv(rep));
      out.add("calibration.csv", io::calibration_csv(rep));
    }
    if (!cfg.alternatives.empty()) out.add("power.csv", io::power_csv(rep));
    json summary = io::coverage_summary(rep);
    if (cfg.oracle || cfg.name == "null-hist") {
      std::vector<NullStatistic> all;
      summary["null"] = json::array();
      for (Index j : cfg.coefs) {
        const auto stats = null_statistics(rep, j);
        std::vector<double> m, o;
        for (const auto& s : stats) {
          m.push_back(s.method);
          if (s.has_oracle) o.push_back(s.oracle);
        }
        json cell{{"coef", j}, {"ks_method_normal", ks_normal(m)}};
        if (!o.empty()) {
          cell["ks_oracle_normal"] = ks_normal(o);
          cell["ks_method_oracle"] = ks_two_sample(m, o);
        }
        summary["null"].push_back(cell);
        all.insert(all.end(), stats.begin(), stats.end());
      }
      out.add("null_stats.csv", io::null_csv(all));
    }
    out.add("summary.json", summary.dump(2) + "\n");
    std::cout << io::coverage_table(rep);
  }
  for (const auto& f : out.commit()) std::cout << f << "\n";
  return kOk;
}

struct CritArgs {
  std::string kind;
  double alpha = 0.05;
  double level = -1.0;
  int d = 1;
  std::string trange = "0:1";
  std::string functional = "norm";
  std::uint64_t seed = kBridgeSeed;
  long paths = kBridgePaths;
  long steps = kBridgeSteps;
  bool json_out = false;
  int threads = 0;
};

int cmd_critvals(const CritArgs& a) {
  const double alpha = a.level > 0.0 ? 1.0 - a.level : a.alpha;
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha (or 1 - level) must lie in (0, 1)");
  if (a.d < 1) throw InputError("--d must be at least 1");
  CriticalValue cv;
  if (a.kind == "z" || a.kind == "normal") {
    cv = normal_critical(alpha);
  } else if (a.kind == "chi2") {
    cv = chi2_critical(a.d, alpha);
  } else if (a.kind == "kolmogorov") {
    cv = kolmogorov_sup_quantile(alpha);
  } else if (a.kind == "bessel") {
    const auto [lo, hi] = io::parse_range(a.trange);
    if (!(lo >= 0.0 && hi <= 1.0 && lo < hi)) throw InputError("--trange needs 0 <= a < b <= 1");
    if (a.paths < 1 || a.steps < 2) throw InputError("--paths >= 1 and --steps >= 2 required");
    BridgeFunctional f;
    if (a.functional == "norm") f = BridgeFunctional::Norm;
    else if (a.functional == "wald") f = BridgeFunctional::NormalizedSq;
    else throw InputError("--functional must be norm or wald");
    BridgeConfig mc;
    mc.seed = a.seed;
    mc.n_paths = a.paths;
    mc.n_steps = a.steps;
    mc.threads = a.threads;
    try {
      cv = bessel_sup_quantile(a.d, lo, hi, alpha, f, mc);
    } catch (const std::invalid_argument& ex) {
      throw InputError(ex.what());
    }
  } else {
    throw InputError("kind must be z, chi2, kolmogorov or bessel");
  }
  if (a.json_out) {
    std::cout << io::to_json(cv).dump(2) << "\n";
  } else {
    std::cout << fmt(cv.value) << "\n";
    std::cerr << io::to_json(cv).dump() << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"High-dimensional quantile regression: fits, debiased inference, tests, simulations"};
  app.require_subcommand(1);
  // `-h` would clash with the bandwidth option `--h`.
  app.set_help_flag("--help", "Print this help message and exit");

  Common fit_c, inf_c, test_c;
  Estimation inf_e, test_e;
  InferArgs inf_a;
  TestArgs test_a;
  SimArgs sim_a;
  CritArgs crit_a;

  auto* fit = app.add_subcommand("fit", "Penalized quantile fits at a level or along a grid");
  add_common(fit, fit_c);

  auto* infer = app.add_subcommand("infer", "Debiased estimates, intervals and bands");
  add_common(infer, inf_c);
  add_estimation(infer, inf_e);
  infer->add_option("--x", inf_a.x, "Loading for a pointwise interval: eK or j=v,...");
  infer->add_flag("--band", inf_a.band, "Uniform band over the grid");
  infer->add_option("--e", inf_a.e, "Loading for --band");
  infer->add_flag("--simultaneous", inf_a.simultaneous, "Simultaneous band over several loadings");
  infer->add_option("--w", inf_a.w, "Loading for --simultaneous (repeatable)");
  infer->add_option("--d", inf_a.d, "Sparsity bound of the simultaneous loadings");
  infer->add_option("--alpha", inf_a.alpha, "Level; intervals have coverage 1 - 2 alpha, bands 1 - alpha");
  infer->add_option("--seed", inf_a.seed, "Bridge Monte Carlo seed");
  infer->add_option("--paths", inf_a.paths, "Bridge Monte Carlo paths");
  infer->add_option("--steps", inf_a.steps, "Bridge Monte Carlo steps");

  auto* test = app.add_subcommand("test", "Wald and sup-Wald tests of M beta(tau) = r");
  add_common(test, test_c);
  add_estimation(test, test_e);
  test->add_option("--coef", test_a.coefs, "Restriction beta_j = value (repeatable)");
  test->add_option("--structural", test_a.structural, "Restriction beta_k = beta_j");
  test->add_option("--hypothesis", test_a.hypothesis, "CSV with header r,c0,...,cp");
  test->add_flag("--sup", test_a.sup, "sup-Wald over the grid");
  test->add_option("--alpha", test_a.alpha, "Test level");
  test->add_option("--seed", test_a.seed, "Bridge Monte Carlo seed");
  test->add_option("--paths", test_a.paths, "Bridge Monte Carlo paths");
  test->add_option("--steps", test_a.steps, "Bridge Monte Carlo steps");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo studies");
  sim->add_option("--preset", sim_a.preset, "desk, paper-scale, null-hist, power or remainder");
  sim->add_option("--config", sim_a.config, "JSON config");
  sim->add_option("--seed", sim_a.seed, "Master seed");
  sim->add_option("--reps", sim_a.reps, "Override the number of replications");
  sim->add_option("--out", sim_a.out, "Output directory");
  sim->add_option("--threads", sim_a.threads, "Worker cap (falls back to HDQR_THREADS)");

  auto* crit = app.add_subcommand("critvals", "Critical values");
  crit->add_option("kind", crit_a.kind, "z, chi2, kolmogorov or bessel")->required();
  crit->add_option("--alpha", crit_a.alpha, "Upper tail probability");
  crit->add_option("--level", crit_a.level, "Lower tail probability (1 - alpha)");
  crit->add_option("--d", crit_a.d, "Degrees of freedom or bridge dimension");
  crit->add_option("--trange", crit_a.trange, "Supremum range a:b (bessel)");
  crit->add_option("--functional", crit_a.functional, "norm (sup ||B||) or wald (sup ||B||^2 / t(1-t))");
  crit->add_option("--seed", crit_a.seed, "Monte Carlo seed");
  crit->add_option("--paths", crit_a.paths, "Monte Carlo paths");
  crit->add_option("--steps", crit_a.steps, "Monte Carlo steps");
  crit->add_option("--threads", crit_a.threads, "Worker cap");
  crit->add_flag("--json", crit_a.json_out, "Print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInput;
  }

  try {
    if (*fit) return cmd_fit(fit_c);
    if (*infer) return cmd_infer(inf_c, inf_e, inf_a);
    if (*test) return cmd_test(test_c, test_e, test_a);
    if (*sim) return cmd_simulate(sim_a);
    if (*crit) return cmd_critvals(crit_a);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const BandwidthError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBandwidth;
  } catch (const SingularSandwich& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSingular;
  } catch (const SolverFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSolver;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSolver;
  }
  return kOk;
}

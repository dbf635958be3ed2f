#pragma once

// Dataset CSV, number formatting, staged atomic output, and the JSON form of
// simulation configs.

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdqr/dataset.hpp"
#include "hdqr/simulate.hpp"

namespace hdqr::io {

using json = nlohmann::ordered_json;

/// Input problem with the line it was found on (0 when not line-specific).
struct InputError : std::invalid_argument {
  long line;
  InputError(const std::string& what, long l = 0) : std::invalid_argument(what), line(l) {}
};

/// 17 significant digits.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

/// Strict decimal parse of a whole field.
inline double parse_number(const std::string& field, const std::string& where) {
  const std::string t = trim(field);
  if (t.empty()) throw InputError(where + ": empty field");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw InputError(where + ": '" + t + "' is not a number");
  }
  if (used != t.size()) throw InputError(where + ": '" + t + "' is not a number");
  return v;
}

/// Header `y,x1,...,xp`, then one row per observation. The intercept column is
/// added here and never stored.
inline Dataset parse_dataset(std::istream& in, const std::string& name = "data") {
  std::string line;
  long lineno = 0;
  if (!std::getline(in, line)) throw InputError(name + ": empty file", 1);
  ++lineno;
  const auto header = split(trim(line), ',');
  if (header.empty() || trim(header[0]) != "y") throw InputError(name + ": line 1: first column must be 'y'", 1);
  for (std::size_t j = 1; j < header.size(); ++j)
    if (trim(header[j]) != "x" + std::to_string(j))
      throw InputError(name + ": line 1: column " + std::to_string(j + 1) + " must be 'x" + std::to_string(j) + "'", 1);
  const std::size_t width = header.size();
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(trim(line), ',');
    const std::string where = name + ": line " + std::to_string(lineno);
    if (fields.size() != width)
      throw InputError(where + ": expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()),
                       lineno);
    std::vector<double> row(width);
    for (std::size_t j = 0; j < width; ++j) {
      try {
        row[j] = parse_number(fields[j], where + ", column " + std::to_string(j + 1));
      } catch (const InputError& e) {
        throw InputError(e.what(), lineno);
      }
      if (!std::isfinite(row[j])) throw InputError(where + ": non-finite value", lineno);
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2) throw InputError(name + ": need at least two observations");
  Dataset d;
  d.y.resize(static_cast<Index>(rows.size()));
  d.x.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d.y[static_cast<Index>(i)] = rows[i][0];
    d.x(static_cast<Index>(i), 0) = 1.0;
    for (std::size_t j = 1; j < width; ++j) d.x(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    throw InputError(name + ": " + e.what());
  }
  return d;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return parse_dataset(in, path);
}

inline std::string dataset_csv(const Dataset& d) {
  std::ostringstream os;
  os << "y";
  for (Index j = 1; j < d.x.cols(); ++j) os << ",x" << j;
  os << "\n";
  for (Index i = 0; i < d.n(); ++i) {
    os << fmt(d.y[i]);
    for (Index j = 1; j < d.x.cols(); ++j) os << "," << fmt(d.x(i, j));
    os << "\n";
  }
  return os.str();
}

/// `a:b:step`, or a single level `a`.
inline TauGrid parse_grid(const std::string& spec) {
  const auto parts = split(spec, ':');
  try {
    if (parts.size() == 1) return TauGrid::single(parse_number(parts[0], "tau"));
    if (parts.size() == 3)
      return TauGrid::range(parse_number(parts[0], "tau grid"), parse_number(parts[1], "tau grid"),
                            parse_number(parts[2], "tau grid"));
  } catch (const InputError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("tau grid '") + spec + "': " + e.what());
  }
  throw InputError("tau grid '" + spec + "' must look like a:b:step");
}

/// `a:b` interval.
inline std::pair<double, double> parse_range(const std::string& spec) {
  const auto parts = split(spec, ':');
  if (parts.size() != 2) throw InputError("range '" + spec + "' must look like a:b");
  return {parse_number(parts[0], "range"), parse_number(parts[1], "range")};
}

/// Files written together: each goes to a temporary name in the target
/// directory first and is renamed into place by commit().
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string content) { files_.emplace_back(name, std::move(content)); }

  std::vector<std::string> commit() const {
    std::filesystem::create_directories(dir_);
    std::vector<std::filesystem::path> temps;
    for (const auto& [name, content] : files_) {
      const auto tmp = dir_ / ("." + name + ".tmp");
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << content;
      out.close();
      if (!out) {
        for (const auto& t : temps) std::filesystem::remove(t);
        std::filesystem::remove(tmp);
        throw std::runtime_error("cannot write " + (dir_ / name).string());
      }
      temps.push_back(tmp);
    }
    std::vector<std::string> written;
    for (std::size_t k = 0; k < files_.size(); ++k) {
      const auto final_path = dir_ / files_[k].first;
      std::filesystem::rename(temps[k], final_path);
      written.push_back(final_path.string());
    }
    return written;
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

// ---------------------------------------------------------------- JSON

inline json to_json(const CriticalValue& cv) {
  json j;
  j["kind"] = to_string(cv.kind);
  j["alpha"] = cv.alpha;
  j["value"] = cv.value;
  if (cv.kind == CriticalKind::Chi2 || cv.kind == CriticalKind::BesselSup) j["d"] = cv.d;
  if (cv.kind == CriticalKind::BesselSup) {
    j["functional"] = cv.functional == BridgeFunctional::Norm ? "norm" : "wald";
    j["seed"] = cv.seed;
    j["paths"] = cv.n_paths;
    j["steps"] = cv.n_steps;
    j["t_lo"] = cv.t_lo;
    j["t_hi"] = cv.t_hi;
  }
  return j;
}

inline json error_to_json(const ErrorSpec& e) {
  json j;
  switch (e.kind) {
    case ErrorKind::Gaussian: j["kind"] = "gaussian"; break;
    case ErrorKind::StudentT: j["kind"] = "t"; j["df"] = e.df; break;
    case ErrorKind::Uniform: j["kind"] = "uniform"; break;
    case ErrorKind::Zero: j["kind"] = "zero"; break;
  }
  return j;
}

inline ErrorSpec error_from_json(const json& j) {
  ErrorSpec e;
  const std::string k = j.is_string() ? j.get<std::string>() : j.at("kind").get<std::string>();
  if (k == "gaussian" || k == "normal") e.kind = ErrorKind::Gaussian;
  else if (k == "t" || k == "student_t") {
    e.kind = ErrorKind::StudentT;
    e.df = j.is_object() && j.contains("df") ? j.at("df").get<int>() : 1;
  } else if (k == "t1") {
    e.kind = ErrorKind::StudentT;
    e.df = 1;
  } else if (k == "uniform") e.kind = ErrorKind::Uniform;
  else if (k == "zero") e.kind = ErrorKind::Zero;
  else throw InputError("config: unknown error kind '" + k + "'");
  return e;
}

inline json config_to_json(const SimConfig& c) {
  json j;
  j["name"] = c.name;
  j["n"] = c.n;
  j["p"] = c.p;
  j["s"] = c.s;
  j["covariance"] = {{"kind", c.covariance.kind == CovarianceKind::EquiCorrelation ? "equicorrelation" : "toeplitz"},
                     {"rho", c.covariance.rho}};
  j["errors"] = json::array();
  for (const auto& e : c.errors) j["errors"].push_back(error_to_json(e));
  j["taus"] = c.taus;
  j["coefs"] = c.coefs;
  j["n_reps"] = c.n_reps;
  j["seed"] = c.seed;
  j["alpha"] = c.alpha;
  j["lambda0"] = c.lambda0;
  j["c1"] = c.c1;
  j["c2"] = c.c2;
  j["c3"] = c.c3;
  j["c4"] = c.c4;
  j["h"] = c.h;
  j["scale_epsilon"] = c.scale_epsilon;
  j["scale_step"] = c.scale_step;
  j["corrected"] = c.corrected;
  j["oracle"] = c.oracle;
  j["tests"] = c.tests;
  j["test_coef"] = c.test_coef;
  j["test_alpha"] = c.test_alpha;
  j["test_tau"] = c.test_tau;
  j["sup_range"] = {c.sup_lo, c.sup_hi, c.sup_step};
  j["bridge"] = {{"seed", c.bridge.seed}, {"paths", c.bridge.n_paths}, {"steps", c.bridge.n_steps}};
  j["alternatives"] = c.alternatives;
  j["ladder"] = c.ladder;
  j["ladder_p_ratio"] = c.ladder_p_ratio;
  j["ladder_seeds"] = c.ladder_seeds;
  j["max_failure_rate"] = c.max_failure_rate;
  return j;
}

/// Reads a config; keys absent from `j` keep their value in `base` (a preset
/// when "preset" is given, else the defaults). Unknown keys are rejected.
inline SimConfig config_from_json(const json& j) {
  if (!j.is_object()) throw InputError("config: expected a JSON object");
  SimConfig c = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : SimConfig{};
  static const std::set<std::string> known{
      "preset", "name", "n", "p", "s", "covariance", "errors", "taus", "coefs", "n_reps", "seed", "alpha", "lambda0",
      "c1", "c2", "c3", "c4", "h", "scale_epsilon", "scale_step", "corrected", "oracle", "tests", "test_coef",
      "test_alpha", "test_tau", "sup_range", "bridge", "alternatives", "ladder", "ladder_p_ratio", "ladder_seeds",
      "max_failure_rate", "threads"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw InputError("config: unknown key '" + key + "'");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("name", c.name);
    get("n", c.n);
    get("p", c.p);
    get("s", c.s);
    if (j.contains("covariance")) {
      const auto& cv = j.at("covariance");
      const std::string k = cv.at("kind").get<std::string>();
      if (k == "equicorrelation" || k == "eq") c.covariance.kind = CovarianceKind::EquiCorrelation;
      else if (k == "toeplitz") c.covariance.kind = CovarianceKind::Toeplitz;
      else throw InputError("config: unknown covariance kind '" + k + "'");
      c.covariance.rho = cv.at("rho").get<double>();
    }
    if (j.contains("errors")) {
      c.errors.clear();
      for (const auto& e : j.at("errors")) c.errors.push_back(error_from_json(e));
    }
    get("taus", c.taus);
    get("coefs", c.coefs);
    get("n_reps", c.n_reps);
    get("seed", c.seed);
    get("alpha", c.alpha);
    get("lambda0", c.lambda0);
    get("c1", c.c1);
    get("c2", c.c2);
    get("c3", c.c3);
    get("c4", c.c4);
    get("h", c.h);
    get("scale_epsilon", c.scale_epsilon);
    get("scale_step", c.scale_step);
    get("corrected", c.corrected);
    get("oracle", c.oracle);
    get("tests", c.tests);
    get("test_coef", c.test_coef);
    get("test_alpha", c.test_alpha);
    get("test_tau", c.test_tau);
    if (j.contains("sup_range")) {
      const auto v = j.at("sup_range").get<std::vector<double>>();
      if (v.size() != 3) throw InputError("config: sup_range must be [lo, hi, step]");
      c.sup_lo = v[0];
      c.sup_hi = v[1];
      c.sup_step = v[2];
    }
    if (j.contains("bridge")) {
      const auto& b = j.at("bridge");
      if (b.contains("seed")) c.bridge.seed = b.at("seed").get<std::uint64_t>();
      if (b.contains("paths")) c.bridge.n_paths = b.at("paths").get<long>();
      if (b.contains("steps")) c.bridge.n_steps = b.at("steps").get<long>();
    }
    get("alternatives", c.alternatives);
    get("ladder", c.ladder);
    get("ladder_p_ratio", c.ladder_p_ratio);
    get("ladder_seeds", c.ladder_seeds);
    get("max_failure_rate", c.max_failure_rate);
    get("threads", c.threads);
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------- simulation outputs

inline std::string coverage_csv(const CoverageReport& r) {
  std::ostringstream os;
  os << "setting,error,tau,coef,reps,covered,coverage,se,mean_sqrt_n_width";
  if (r.config.oracle) os << ",oracle_covered,oracle_coverage,oracle_se,oracle_mean_sqrt_n_width";
  os << "\n";
  for (const auto& c : r.cells) {
    os << c.setting << "," << c.error << "," << fmt(c.tau) << "," << c.coef << "," << c.reps << "," << c.covered << ","
       << fmt(c.coverage) << "," << fmt(c.se) << "," << fmt(c.mean_sqrt_n_width);
    if (r.config.oracle)
      os << "," << c.oracle_covered << "," << fmt(c.oracle_coverage) << "," << fmt(c.oracle_se) << ","
         << fmt(c.oracle_mean_sqrt_n_width);
    os << "\n";
  }
  return os.str();
}

inline std::string replications_csv(const CoverageReport& r) {
  const SimConfig& c = r.config;
  std::ostringstream os;
  os << "rep,error,ok,h,s_hat,tau,sparsity,coef,estimate,truth,half_width,covered,standardized";
  if (c.oracle) os << ",oracle_estimate,oracle_half_width,oracle_covered,oracle_standardized";
  os << "\n";
  for (const auto& d : r.draws)
    for (std::size_t e = 0; e < c.errors.size(); ++e) {
      const UnitDraw& u = d.units[e];
      if (!u.ok) {
        os << d.rep << "," << c.errors[e].label() << ",0,,,,,,,,,,";
        if (c.oracle) os << ",,,,";
        os << "\n";
        continue;
      }
      for (std::size_t t = 0; t < c.taus.size(); ++t)
        for (std::size_t a = 0; a < c.coefs.size(); ++a) {
          const CellDraw& cd = u.cells[t][a];
          os << d.rep << "," << c.errors[e].label() << ",1," << fmt(u.h) << "," << u.s_hat << ","
             << fmt(TauGrid::snap(c.taus[t])) << "," << fmt(u.sparsity[t]) << "," << c.coefs[a] << ","
             << fmt(cd.estimate) << "," << fmt(cd.truth) << "," << fmt(cd.half_width) << "," << (cd.covered ? 1 : 0)
             << "," << fmt(cd.standardized);
          if (c.oracle)
            os << "," << fmt(cd.oracle_estimate) << "," << fmt(cd.oracle_half_width) << ","
               << (cd.oracle_covered ? 1 : 0) << "," << fmt(cd.oracle_standardized);
          os << "\n";
        }
    }
  return os.str();
}

inline std::string tests_csv(const CoverageReport& r) {
  std::ostringstream os;
  os << "rep,error,wald,sup_wald,sup_tau\n";
  for (const auto& d : r.draws)
    for (std::size_t e = 0; e < r.config.errors.size(); ++e) {
      const UnitDraw& u = d.units[e];
      if (!u.ok || !u.has_tests) continue;
      os << d.rep << "," << r.config.errors[e].label() << "," << fmt(u.wald) << "," << fmt(u.sup_wald) << ","
         << fmt(u.sup_tau) << "\n";
    }
  return os.str();
}

inline std::string calibration_csv(const CoverageReport& r) {
  std::ostringstream os;
  os << "setting,error,test,tau_lo,tau_hi,critical,reps,rejections,rate,se\n";
  for (const auto& c : r.calibration)
    os << c.setting << "," << c.error << "," << c.test << "," << fmt(c.tau_lo) << "," << fmt(c.tau_hi) << ","
       << fmt(c.critical) << "," << c.reps << "," << c.rejections << "," << fmt(c.rate) << "," << fmt(c.se) << "\n";
  return os.str();
}

inline std::string power_csv(const CoverageReport& r) {
  std::ostringstream os;
  os << "error,delta,reps,rejections,rate,se\n";
  for (const auto& p : r.power)
    os << p.error << "," << fmt(p.delta) << "," << p.reps << "," << p.rejections << "," << fmt(p.rate) << ","
       << fmt(p.se) << "\n";
  return os.str();
}

inline std::string failures_csv(const CoverageReport& r) {
  std::ostringstream os;
  os << "rep,error,message\n";
  for (const auto& f : r.failures) {
    std::string m = f.message;
    for (char& ch : m)
      if (ch == ',' || ch == '\n') ch = ';';
    os << f.rep << "," << f.error << "," << m << "\n";
  }
  return os.str();
}

inline std::string null_csv(const std::vector<NullStatistic>& stats) {
  std::ostringstream os;
  os << "rep,error,tau,coef,method,oracle\n";
  for (const auto& s : stats)
    os << s.rep << "," << s.error << "," << fmt(s.tau) << "," << s.coef << "," << fmt(s.method) << ","
       << (s.has_oracle ? fmt(s.oracle) : std::string()) << "\n";
  return os.str();
}

inline std::string remainder_csv(const RemainderDiagnostic& r) {
  std::ostringstream os;
  os << "n,p,mode,seeds,failed,median\n";
  for (const auto& row : r.rows)
    os << row.n << "," << row.p << "," << row.mode << "," << row.seeds << "," << row.failed << "," << fmt(row.median)
       << "\n";
  return os.str();
}

inline std::string remainder_values_csv(const RemainderDiagnostic& r) {
  std::ostringstream os;
  os << "n,mode,index,sup_remainder\n";
  for (const auto& row : r.rows)
    for (std::size_t k = 0; k < row.values.size(); ++k)
      os << row.n << "," << row.mode << "," << k << "," << fmt(row.values[k]) << "\n";
  return os.str();
}

inline json coverage_summary(const CoverageReport& r) {
  json j;
  j["config"] = config_to_json(r.config);
  j["units"] = r.units;
  j["failed_units"] = r.failures.size();
  j["coverage"] = json::array();
  for (const auto& c : r.cells) {
    json cell{{"setting", c.setting}, {"error", c.error},     {"tau", c.tau},
              {"coef", c.coef},       {"reps", c.reps},       {"coverage", c.coverage},
              {"se", c.se},           {"mean_sqrt_n_width", c.mean_sqrt_n_width}};
    if (c.has_oracle) {
      cell["oracle_coverage"] = c.oracle_coverage;
      cell["oracle_se"] = c.oracle_se;
      cell["oracle_mean_sqrt_n_width"] = c.oracle_mean_sqrt_n_width;
    }
    j["coverage"].push_back(cell);
  }
  if (r.config.tests) {
    j["wald_critical"] = to_json(r.wald_critical);
    j["sup_wald_critical"] = to_json(r.sup_critical);
    j["calibration"] = json::array();
    for (const auto& c : r.calibration)
      j["calibration"].push_back({{"error", c.error},
                                  {"test", c.test},
                                  {"tau_lo", c.tau_lo},
                                  {"tau_hi", c.tau_hi},
                                  {"reps", c.reps},
                                  {"rejections", c.rejections},
                                  {"rate", c.rate},
                                  {"se", c.se}});
  }
  if (!r.power.empty()) {
    j["power"] = json::array();
    for (const auto& p : r.power)
      j["power"].push_back({{"error", p.error}, {"delta", p.delta}, {"reps", p.reps}, {"rate", p.rate}, {"se", p.se}});
  }
  return j;
}

/// Coverage table in the layout of the reference table: one block per
/// setting and error, a column pair per (tau, coefficient) holding coverage
/// and mean sqrt(n) width.
inline std::string coverage_table(const CoverageReport& r) {
  const SimConfig& c = r.config;
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "Coverage (%%) of %.0f%% intervals and sqrt(n) x width; n=%ld p=%ld s=%ld reps=%ld\n",
                100.0 * (1.0 - 2.0 * c.alpha), static_cast<long>(c.n), static_cast<long>(c.p),
                static_cast<long>(c.s), static_cast<long>(c.n_reps));
  os << buf;
  for (const auto& err : c.errors) {
    for (double tau : c.taus) {
      std::snprintf(buf, sizeof buf, "%s  %-9s tau=%-5s", c.covariance.label().c_str(), err.label().c_str(),
                    CovarianceSpec::format_short(tau).c_str());
      os << buf;
      for (Index j : c.coefs) {
        std::snprintf(buf, sizeof buf, " %16s", ("beta_" + std::to_string(j)).c_str());
        os << buf;
      }
      os << "\n";
      for (int oracle = 0; oracle <= (c.oracle ? 1 : 0); ++oracle) {
        std::snprintf(buf, sizeof buf, "  %-30s", oracle ? "oracle" : "method");
        os << buf;
        for (Index j : c.coefs)
          for (const auto& cell : r.cells)
            if (cell.error == err.label() && std::abs(cell.tau - TauGrid::snap(tau)) < 1e-12 && cell.coef == j) {
              std::snprintf(buf, sizeof buf, " %7.1f (%6.2f)", oracle ? cell.oracle_coverage : cell.coverage,
                            oracle ? cell.oracle_mean_sqrt_n_width : cell.mean_sqrt_n_width);
              os << buf;
            }
        os << "\n";
      }
    }
  }
  for (const auto& cal : r.calibration) {
    std::snprintf(buf, sizeof buf, "%-9s %-8s tau in [%s, %s]: rejection %.1f%% (se %.1f) at level %.0f%%\n",
                  cal.error.c_str(), cal.test.c_str(), CovarianceSpec::format_short(cal.tau_lo).c_str(),
                  CovarianceSpec::format_short(cal.tau_hi).c_str(), cal.rate, cal.se, 100.0 * c.test_alpha);
    os << buf;
  }
  if (!r.failures.empty()) os << r.failures.size() << " of " << r.units << " replication units failed\n";
  return os.str();
}

}  // namespace hdqr::io

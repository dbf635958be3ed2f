#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include "hdqr/io.hpp"

namespace fs = std::filesystem;
using namespace hdqr;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(HDQR_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;
  static fs::path data;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("hdqr_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    data = dir / "d.csv";
    std::mt19937_64 rng(42);
    std::normal_distribution<double> g;
    const int n = 120, p = 25;
    std::ofstream os(data);
    os << "y";
    for (int j = 1; j <= p; ++j) os << ",x" << j;
    os << "\n";
    for (int i = 0; i < n; ++i) {
      std::vector<double> x(p);
      for (auto& v : x) v = g(rng);
      const double y = x[0] + 0.5 * x[1] + x[6] + g(rng);
      os << io::fmt(y);
      for (double v : x) os << "," << io::fmt(v);
      os << "\n";
    }
  }

  static void TearDownTestSuite() { fs::remove_all(dir); }

  fs::path out(const std::string& name) const {
    const fs::path o = dir / name;
    fs::create_directories(o);
    return o;
  }
};

fs::path Cli::dir;
fs::path Cli::data;

}  // namespace

TEST(Io, FormatsRoundTrip) {
  EXPECT_EQ(io::fmt(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(io::fmt(1.0 / 3.0)), 1.0 / 3.0);
  EXPECT_EQ(io::fmt(std::numeric_limits<double>::quiet_NaN()), "nan");
  const auto g = io::parse_grid("0.1:0.9:0.02");
  EXPECT_EQ(g.size(), 41);
  EXPECT_EQ(io::parse_grid("0.5").size(), 1);
  EXPECT_THROW(io::parse_grid("0.1:0.9"), io::InputError);
  EXPECT_THROW(io::parse_number("1.5x", "here"), io::InputError);
}

TEST(Io, DatasetParsing) {
  std::istringstream ok("y,x1,x2\n1,2,3\n4,5,6\n");
  const Dataset d = io::parse_dataset(ok);
  EXPECT_EQ(d.n(), 2);
  EXPECT_EQ(d.p(), 2);
  EXPECT_EQ(d.x(1, 0), 1.0);
  EXPECT_EQ(d.x(1, 2), 6.0);
  std::istringstream back(io::dataset_csv(d));
  const Dataset e = io::parse_dataset(back);
  EXPECT_EQ(d.x, e.x);
  EXPECT_EQ(d.y, e.y);

  std::istringstream ragged("y,x1,x2\n1,2,3\n4,5\n");
  try {
    io::parse_dataset(ragged);
    FAIL();
  } catch (const io::InputError& ex) {
    EXPECT_NE(std::string(ex.what()).find("line 3"), std::string::npos) << ex.what();
  }
  std::istringstream header("y,z1\n1,2\n");
  EXPECT_THROW(io::parse_dataset(header), io::InputError);
  std::istringstream bad("y,x1\n1,abc\n");
  EXPECT_THROW(io::parse_dataset(bad), io::InputError);
}

TEST(Io, ConfigRoundTrip) {
  SimConfig c = preset("power");
  c.errors = {ErrorSpec{ErrorKind::StudentT, 3}, ErrorSpec{ErrorKind::Uniform, 1}};
  c.covariance = {CovarianceKind::Toeplitz, 0.3};
  const SimConfig back = io::config_from_json(io::config_to_json(c));
  EXPECT_EQ(io::config_to_json(back).dump(), io::config_to_json(c).dump());
  EXPECT_THROW(io::config_from_json(io::json{{"bogus", 1}}), io::InputError);
  const SimConfig p = io::config_from_json(io::json{{"preset", "desk"}, {"n_reps", 3}});
  EXPECT_EQ(p.n_reps, 3);
  EXPECT_EQ(p.errors.size(), 2u);
}

TEST_F(Cli, FitSingleAndGrid) {
  const auto o = out("fit");
  auto r = run("fit --data " + data.string() + " --tau 0.5 --lambda0 2.0 --out " + o.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(lines(slurp(o / "beta_path.csv")).size(), 2u);
  const auto meta = io::json::parse(slurp(o / "fit_meta.json"));
  EXPECT_EQ(meta["fits"][0]["status"], "Optimal");
  r = run("fit --data " + data.string() + " --tau-grid 0.1:0.9:0.02 --out " + o.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(lines(slurp(o / "beta_path.csv")).size(), 42u);
}

TEST_F(Cli, RaggedCsvLeavesNoOutput) {
  const auto o = out("ragged");
  const fs::path bad = dir / "bad.csv";
  std::ofstream(bad) << "y,x1,x2\n1,2,3\n1,2\n";
  const auto r = run("fit --data " + bad.string() + " --tau 0.5 --out " + o.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("line 3"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::is_empty(o));
}

TEST_F(Cli, InferIntervalBandAndKnownSigma) {
  const auto o = out("infer");
  auto r = run("infer --data " + data.string() + " --x e7 --tau 0.5 --alpha 0.025 --out " + o.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto ci = lines(slurp(o / "ci.csv"));
  EXPECT_EQ(ci.size(), 2u);
  for (const char* f : {"debiased_path.csv", "sparsity_path.csv", "precision_meta.json"}) EXPECT_TRUE(fs::exists(o / f)) << f;

  const auto ob = out("band");
  r = run("infer --data " + data.string() + " --band --e e7 --tau-grid 0.2:0.8:0.02 --out " + ob.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto band = lines(slurp(ob / "band.csv"));
  EXPECT_EQ(band.size(), 32u);
  EXPECT_NE(band[1].find("1.358"), std::string::npos) << band[1];

  const auto ok = out("known");
  r = run("infer --data " + data.string() + " --x e1 --tau-grid 0.3:0.7:0.1 --known-sigma normal --out " + ok.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto sp = lines(slurp(ok / "sparsity_path.csv"));
  ASSERT_GE(sp.size(), 4u);
  // Row for tau = 0.5 holds sqrt(2 pi).
  bool found = false;
  for (const auto& l : sp)
    if (l.rfind("0.5,", 0) == 0) {
      found = true;
      EXPECT_NE(l.find("2.50662827463"), std::string::npos) << l;
    }
  EXPECT_TRUE(found);
}

TEST_F(Cli, InferBandwidthFailure) {
  const auto o = out("bw");
  const auto r = run("infer --data " + data.string() + " --x e1 --tau 0.1 --h 0.1 --out " + o.string());
  EXPECT_EQ(r.code, 4) << r.out;
  EXPECT_NE(r.out.find("0.1"), std::string::npos);
}

TEST_F(Cli, WaldSupWaldStructuralAndSingular) {
  const auto o = out("test");
  auto r = run("test --data " + data.string() + " --coef 20=0 --tau 0.5 --alpha 0.05 --out " + o.string());
  ASSERT_EQ(r.code, 0) << r.out;
  auto j = io::json::parse(slurp(o / "test.json"));
  EXPECT_NEAR(j["critical_value"]["value"].get<double>(), 3.841459, 1e-6);

  r = run("test --data " + data.string() +
          " --coef 3=0 --coef 4=0 --sup --tau-grid 0.2:0.8:0.05 --paths 2000 --steps 200 --seed 3 --out " + o.string());
  ASSERT_EQ(r.code, 0) << r.out;
  j = io::json::parse(slurp(o / "test.json"));
  EXPECT_EQ(j["critical_value"]["d"], 2);
  EXPECT_EQ(j["critical_value"]["seed"], 3);
  EXPECT_EQ(j["critical_value"]["paths"], 2000);

  r = run("test --data " + data.string() + " --structural 1,2 --tau 0.5 --out " + o.string());
  ASSERT_EQ(r.code, 0) << r.out;

  r = run("test --data " + data.string() + " --coef 3=0 --coef 3=1 --tau 0.5 --out " + o.string());
  EXPECT_EQ(r.code, 5) << r.out;
}

TEST_F(Cli, Critvals) {
  auto r = run("critvals kolmogorov --alpha 0.05");
  ASSERT_EQ(r.code, 0);
  EXPECT_NEAR(std::stod(r.out), 1.3581, 1e-3);
  r = run("critvals chi2 --d 2 --level 0.95");
  ASSERT_EQ(r.code, 0);
  EXPECT_NEAR(std::stod(r.out), 5.9915, 1e-3);
  const std::string b = "critvals bessel --d 2 --alpha 0.05 --trange 0.2:0.8 --seed 1 --paths 3000 --steps 200";
  const auto a1 = run(b), a2 = run(b);
  ASSERT_EQ(a1.code, 0);
  EXPECT_EQ(a1.out, a2.out);
  EXPECT_EQ(run("critvals nope").code, 2);
  EXPECT_EQ(run("critvals z --alpha 2").code, 2);
}

TEST_F(Cli, SimulateDeterministicAndValidated) {
  const fs::path cfg = dir / "sim.json";
  std::ofstream(cfg) << R"({"n": 60, "p": 30, "s": 3, "n_reps": 2, "coefs": [1, 5], "test_coef": 5,
    "scale_step": 0.01, "sup_range": [0.3, 0.7, 0.1], "bridge": {"paths": 2000, "steps": 100},
    "errors": [{"kind": "gaussian"}, {"kind": "t", "df": 1}]})";
  const auto a = out("sim_a"), b = out("sim_b");
  auto r = run("simulate --config " + cfg.string() + " --seed 9 --out " + a.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("EQ(0.5)"), std::string::npos);
  r = run("simulate --config " + cfg.string() + " --seed 9 --threads 2 --out " + b.string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
  }
  EXPECT_GE(files, 6u);

  const fs::path bad = dir / "bad.json";
  std::ofstream(bad) << R"({"n": 60, "p": 30, "alpha": 0.7})";
  const auto c = out("sim_bad");
  EXPECT_EQ(run("simulate --config " + bad.string() + " --out " + c.string()).code, 2);
  EXPECT_TRUE(fs::is_empty(c));
  EXPECT_EQ(run("simulate --preset nope --out " + c.string()).code, 2);
}

TEST_F(Cli, RejectsBadArguments) {
  EXPECT_EQ(run("fit --data /nonexistent.csv --tau 0.5").code, 2);
  EXPECT_EQ(run("fit --data " + data.string() + " --tau 1.5").code, 2);
  EXPECT_EQ(run("infer --data " + data.string() + " --x e99 --tau 0.5").code, 2);
  EXPECT_EQ(run("bogus").code, 2);
}

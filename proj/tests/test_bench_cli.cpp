#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include "sobolmd/bench.hpp"

using namespace sobolmd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_root() {
  static const fs::path root = [] {
    const fs::path dir = fs::temp_directory_path() /
                         ("sobolmd-cli-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    ::setenv("SOBOL_MIRROR_CACHE", (dir / "cache").c_str(), 1);
    return dir;
  }();
  return root;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = scratch_root() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args, const fs::path& stdout_file = {}) {
  std::string cmd = std::string(SOBOLMD_CLI_PATH) + " " + args;
  if (!stdout_file.empty())
    cmd += " > " + stdout_file.string() + " 2>&1";
  else
    cmd += " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string first_line(const std::string& text) {
  return text.substr(0, text.find('\n'));
}

}  // namespace

TEST_CASE("float formatting survives a round trip") {
  for (double v : {1.0 / 3.0, 0.1, 1e-300, 123456.789, 0.0, -2.5e17}) {
    const std::string s = format_double(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
  CHECK(format_double(0.25) == "0.25");
}

TEST_CASE("parallel replicate runner fills every slot") {
  std::vector<int> out(37, -1);
  parallel_replicates(37, 4, [&](int r) { out[static_cast<std::size_t>(r)] = r * r; });
  for (int r = 0; r < 37; ++r) CHECK(out[static_cast<std::size_t>(r)] == r * r);

  CHECK_THROWS_AS(parallel_replicates(8, 3,
                                      [&](int r) {
                                        if (r == 5) throw std::runtime_error("boom");
                                      }),
                  std::runtime_error);
}

TEST_CASE("strategy labels") {
  SubsetUniverse uni(2);
  CHECK(strategy_from_label("unif", uni, 1e-6, false).strategy.kind ==
        SamplingStrategy::Kind::fixed);
  CHECK_FALSE(strategy_from_label("unif", uni, 1e-6, false).averaging);
  CHECK(strategy_from_label("avg", uni, 1e-6, false).averaging);
  CHECK(strategy_from_label("S", uni, 1e-6, false).strategy.kind ==
        SamplingStrategy::Kind::proportional_s);
  CHECK(strategy_from_label("1/S", uni, 1e-6, false).strategy.kind ==
        SamplingStrategy::Kind::inverse_s);
  CHECK(strategy_from_label("1/S", uni, 1e-4, true).strategy.exclude_empty);
  CHECK_THROWS_AS(strategy_from_label("besto", uni, 1e-6, false), std::invalid_argument);
}

TEST_CASE("pick-freeze budget mapping") {
  BenchConfig cfg;
  cfg.model = make_builtin_model("disc2");  // 2^p = 8
  cfg.pf_budget = "iterations";
  CHECK(pf_pairs_for_horizon(cfg, 4000) == 500);
  CHECK(pf_pairs_for_horizon(cfg, 8) == 2);  // floor keeps the estimator defined
  cfg.pf_budget = "evals";
  CHECK(pf_pairs_for_horizon(cfg, 4000) == 571);  // 2*4000 evals over 7 subsets
}

TEST_CASE("model json round trip") {
  const ModelSpec m = make_builtin_model("linear", 3, {1.0, 2.0, 3.0});
  const ModelSpec back = model_from_json(model_to_json(m));
  CHECK(back.name == m.name);
  CHECK(back.p == m.p);
  CHECK(back.params == m.params);
  CHECK(back.input_laws[0].kind == InputLaw::Kind::gaussian);

  const nlohmann::json ext{{"external", {"/bin/true", "--x"}}, {"p", 2}};
  const ModelSpec e = model_from_json(ext);
  CHECK(e.is_external());
  CHECK(e.input_laws.size() == 2);
  CHECK(e.input_laws[0].kind == InputLaw::Kind::uniform);
}

TEST_CASE("configs reject unknown keys") {
  nlohmann::json j{{"model", {{"name", "disc2"}}}, {"horizonz", {100}}};
  CHECK_THROWS_AS(bench_config_from_json(j), std::invalid_argument);
  nlohmann::json e{{"model", {{"name", "disc2"}}}, {"iterationz", 5}};
  CHECK_THROWS_AS(estimate_config_from_json(e), std::invalid_argument);
  BenchConfig cfg;
  cfg.model = make_builtin_model("disc2");
  cfg.horizons = {200, 100};
  CHECK_THROWS_AS(validate_bench_config(cfg), std::invalid_argument);
  cfg.horizons = {100, 200};
  cfg.pf_budget = "pairs";
  CHECK_THROWS_AS(validate_bench_config(cfg), std::invalid_argument);
}

TEST_CASE("bench results are independent of the job count") {
  BenchConfig cfg;
  cfg.model = make_builtin_model("disc2");
  cfg.strategies = {"unif", "avg"};
  cfg.include_pf1 = true;
  cfg.horizons = {100, 200};
  cfg.replicates = 3;
  cfg.master_seed = 99;
  cfg.oracle_resolution = 8;
  cfg.cache_dir = scratch_dir("bench-lib-cache").string();

  cfg.jobs = 1;
  const MseTable serial = run_bench(cfg);
  cfg.jobs = 4;
  const MseTable threaded = run_bench(cfg);

  REQUIRE(serial.rows.size() == threaded.rows.size());
  REQUIRE(serial.rows.size() == 3 * 2 * 8);  // methods x horizons x subsets
  for (std::size_t i = 0; i < serial.rows.size(); ++i) {
    CHECK(serial.rows[i].mse == threaded.rows[i].mse);
    CHECK(serial.rows[i].method == threaded.rows[i].method);
  }
  REQUIRE(serial.aggregate.size() == 6);

  // the aggregate is the mean over subsets of the per-subset rows
  for (const auto& agg : serial.aggregate) {
    double acc = 0.0;
    int count = 0;
    for (const auto& row : serial.rows)
      if (row.method == agg.method && row.strategy == agg.strategy &&
          row.horizon == agg.horizon) {
        acc += row.mse;
        ++count;
      }
    REQUIRE(count == 8);
    CHECK(agg.mse == Catch::Approx(acc / 8).margin(1e-15));
  }

  // pf1 rows carry the budget rule in the strategy column
  bool saw_pf = false;
  for (const auto& row : serial.rows)
    if (row.method == "pf1") {
      CHECK(row.strategy == "budget-iterations");
      saw_pf = true;
    }
  CHECK(saw_pf);
}

TEST_CASE("cli estimate is deterministic and writes the documented files") {
  const fs::path d1 = scratch_dir("est1");
  const fs::path d2 = scratch_dir("est2");
  const std::string base =
      "estimate --model disc2 --iterations 300 --seed 7 --snapshots 3 --output-dir ";
  CHECK(run_cli(base + d1.string()) == 0);
  CHECK(run_cli(base + d2.string()) == 0);

  const std::string csv1 = read_file(d1 / "estimates.csv");
  CHECK(csv1 == read_file(d2 / "estimates.csv"));
  CHECK(first_line(csv1) == "replicate,n,subset_mask,subset,sobol_estimate,closed_estimate");
  CHECK(csv1.find("\"{1,3}\"") != std::string::npos);

  nlohmann::json s1, s2;
  std::ifstream(d1 / "summary.json") >> s1;
  std::ifstream(d2 / "summary.json") >> s2;
  CHECK(s1.at("sobol") == s2.at("sobol"));
  CHECK(s1.at("closed") == s2.at("closed"));
  CHECK(s1.at("evals").get<std::uint64_t>() == 600);
  CHECK(s1.at("total").size() == 3);

  // a different seed changes the estimates
  const fs::path d3 = scratch_dir("est3");
  CHECK(run_cli("estimate --model disc2 --iterations 300 --seed 8 --snapshots 3 "
                "--output-dir " + d3.string()) == 0);
  CHECK(read_file(d3 / "estimates.csv") != csv1);
}

TEST_CASE("cli estimate resumes from a checkpoint") {
  const fs::path whole = scratch_dir("resume-whole");
  const fs::path part = scratch_dir("resume-part");
  CHECK(run_cli("estimate --model disc2 --iterations 200 --seed 11 --output-dir " +
                whole.string()) == 0);
  const fs::path state = part / "state.json";
  CHECK(run_cli("estimate --model disc2 --iterations 120 --seed 11 --state-out " +
                state.string() + " --output-dir " + part.string()) == 0);
  CHECK(run_cli("estimate --model disc2 --iterations 200 --seed 11 --state-in " +
                state.string() + " --output-dir " + part.string()) == 0);

  nlohmann::json a, b;
  std::ifstream(whole / "summary.json") >> a;
  std::ifstream(part / "summary.json") >> b;
  CHECK(a.at("sobol") == b.at("sobol"));
  CHECK(a.at("mean") == b.at("mean"));
}

TEST_CASE("cli estimate with the averaging strategy reports the running average") {
  const fs::path dir = scratch_dir("est-avg");
  CHECK(run_cli("estimate --model disc2 --strategy avg --iterations 200 --seed 3 "
                "--output-dir " + dir.string()) == 0);
  nlohmann::json s;
  std::ifstream(dir / "summary.json") >> s;
  REQUIRE(s.contains("cesaro"));
  const auto avg = s.at("cesaro").get<std::vector<double>>();
  REQUIRE(avg.size() == 8);
  CHECK(avg[0] == 0.0);
}

TEST_CASE("cli bench output files and jobs determinism") {
  const fs::path d1 = scratch_dir("bench1");
  const fs::path d2 = scratch_dir("bench2");
  const std::string base =
      "bench --model disc2 --strategies unif,S --horizons 60,120 --replicates 3 "
      "--seed 5 --resolution 8 ";
  CHECK(run_cli(base + "--jobs 1 --output-dir " + d1.string()) == 0);
  CHECK(run_cli(base + "--jobs 4 --output-dir " + d2.string()) == 0);

  const std::string mse = read_file(d1 / "mse.csv");
  CHECK(mse == read_file(d2 / "mse.csv"));
  CHECK(first_line(mse) == "method,strategy,horizon,subset_mask,mse");

  const std::string agg = read_file(d1 / "mse_aggregate.csv");
  CHECK(agg == read_file(d2 / "mse_aggregate.csv"));
  CHECK(first_line(agg) == "method,strategy,horizon,mse");
  CHECK(agg.find("pf1,budget-iterations,120,") != std::string::npos);
  CHECK(agg.find("mirror,unif,60,") != std::string::npos);
}

TEST_CASE("cli bench reads a json config with flag overrides") {
  const fs::path dir = scratch_dir("bench-config");
  const fs::path cfg_file = dir / "bench.json";
  {
    nlohmann::json j{{"model", {{"name", "disc2"}}},
                     {"strategies", {"unif"}},
                     {"include_pf1", false},
                     {"horizons", {40, 80}},
                     {"replicates", 2},
                     {"seed", 9},
                     {"oracle_resolution", 8},
                     {"output_dir", dir.string()}};
    std::ofstream(cfg_file) << j.dump(2);
  }
  CHECK(run_cli("bench --config " + cfg_file.string() + " --replicates 3") == 0);
  const std::string mse = read_file(dir / "mse.csv");
  CHECK(mse.find("pf1") == std::string::npos);

  // unknown config keys are a config error
  {
    nlohmann::json j{{"model", {{"name", "disc2"}}}, {"horizon", {40}}};
    std::ofstream(cfg_file) << j.dump(2);
  }
  CHECK(run_cli("bench --config " + cfg_file.string()) == 2);
}

TEST_CASE("cli oracle prints and caches the reference table") {
  const fs::path dir = scratch_dir("oracle");
  const fs::path out = dir / "table.json";
  const fs::path txt = dir / "stdout.txt";
  CHECK(run_cli("oracle --model linear --p 2 --coeffs 1,2 --resolution 8 --cache-dir " +
                    dir.string() + " --output " + out.string(),
                txt) == 0);
  nlohmann::json j;
  std::ifstream(out) >> j;
  CHECK(j.at("p").get<int>() == 2);
  CHECK(j.at("closed")[1].get<double>() == Catch::Approx(0.2).margin(1e-9));
  CHECK(read_file(txt).find("variance") != std::string::npos);

  bool cached = false;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().filename().string().rfind("reference-linear", 0) == 0) cached = true;
  CHECK(cached);

  CHECK(run_cli("oracle --external /bin/true --p 2") == 4);
}

TEST_CASE("cli baseline writes the estimate files") {
  const fs::path dir = scratch_dir("baseline");
  CHECK(run_cli("baseline --model linear --p 2 --coeffs 1,2 --pairs 300 --seed 3 "
                "--output-dir " + dir.string()) == 0);
  const std::string csv = read_file(dir / "estimates.csv");
  CHECK(first_line(csv) == "replicate,n,subset_mask,subset,sobol_estimate,closed_estimate");
  nlohmann::json s;
  std::ifstream(dir / "summary.json") >> s;
  CHECK(s.at("method") == "pf1");
  CHECK(s.at("evals").get<std::uint64_t>() == 2 * 300 * 3);
}

TEST_CASE("cli validate runs the fast suites") {
  CHECK(run_cli("validate --suite inversion --p 4") == 0);
  CHECK(run_cli("validate --suite simplex") == 0);
  CHECK(run_cli("validate --suite nosuch") == 2);
}

TEST_CASE("cli rejects invalid configurations") {
  CHECK(run_cli("estimate --model nosuch --iterations 10 --output-dir /tmp/x") == 2);
  CHECK(run_cli("estimate --iterations 10") == 2);  // no model at all
  CHECK(run_cli("bench --model disc2 --horizons 200,100 --replicates 2 "
                "--resolution 8 --output-dir /tmp/x") == 2);
  CHECK(run_cli("estimate --model disc2 --strategy warp --iterations 10 "
                "--output-dir /tmp/x") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("estimate --no-such-flag 1") == 2);
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("cli drives an external model over the line protocol") {
  const std::string child = PROTO_CHILD_PATH;
  const fs::path dir = scratch_dir("external");

  CHECK(run_cli("estimate --external '" + child + "' --p 3 --iterations 60 --seed 2 "
                "--output-dir " + dir.string()) == 0);
  nlohmann::json s;
  std::ifstream(dir / "summary.json") >> s;
  CHECK(s.at("evals").get<std::uint64_t>() == 120);
  CHECK(std::isfinite(s.at("mean").get<double>()));

  // the run is reproducible through the subprocess boundary
  const fs::path dir2 = scratch_dir("external2");
  CHECK(run_cli("estimate --external '" + child + "' --p 3 --iterations 60 --seed 2 "
                "--output-dir " + dir2.string()) == 0);
  CHECK(read_file(dir / "estimates.csv") == read_file(dir2 / "estimates.csv"));
}

TEST_CASE("cli surfaces external evaluator failures") {
  const std::string child = PROTO_CHILD_PATH;
  const fs::path dir = scratch_dir("external-fail");

  CHECK(run_cli("estimate --external '" + child + " --nan-after 5' --p 3 "
                "--iterations 60 --seed 2 --output-dir " + dir.string()) == 3);
  CHECK(run_cli("estimate --external '" + child + " --bad-handshake' --p 3 "
                "--iterations 10 --seed 2 --output-dir " + dir.string()) == 3);
  CHECK(run_cli("estimate --external '" + child + " --die-after 4' --p 3 "
                "--iterations 60 --seed 2 --output-dir " + dir.string()) == 3);
  CHECK(run_cli("estimate --external '" + child + " --sleep-ms 500' --p 3 "
                "--iterations 10 --seed 2 --timeout 0.1 --output-dir " +
                dir.string()) == 3);
  CHECK(run_cli("estimate --external /no/such/binary --p 3 --iterations 10 "
                "--output-dir " + dir.string()) == 3);
}

// Command line front end: online estimation of all Sobol indices by
// mirror descent over pick-freeze pairs, plus the classical baseline,
// quadrature references and internal consistency checks.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sobolmd/bench.hpp"
#include "sobolmd/errors.hpp"
#include "sobolmd/validate.hpp"

namespace {

constexpr int kExitValidateFailed = 1;
constexpr int kExitInvalidConfig = 2;
constexpr int kExitEvaluation = 3;
constexpr int kExitMissingOracle = 4;

std::vector<std::string> split_command(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write " + path.string());
  out << body;
}

struct ModelFlags {
  std::string name;
  int p = 0;
  std::vector<double> coeffs;
  std::string external;
};

// Flags replace the config-file model wholesale when given.
void apply_model_flags(sobolmd::ModelSpec& model, const ModelFlags& mf, bool name_set,
                       bool external_set) {
  if (external_set) {
    if (mf.p <= 0)
      throw std::invalid_argument("--external requires --p");
    std::vector<sobolmd::InputLaw> laws(static_cast<std::size_t>(mf.p),
                                        sobolmd::InputLaw::make_uniform(0.0, 1.0));
    model = sobolmd::make_external_model(split_command(mf.external), mf.p, std::move(laws));
  } else if (name_set) {
    model = sobolmd::make_builtin_model(mf.name, mf.p, mf.coeffs);
  }
}

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
  cmd->add_option("--model", mf.name, "builtin model: linear, bratley, disc, disc2");
  cmd->add_option("--p", mf.p, "number of input variables");
  cmd->add_option("--coeffs", mf.coeffs, "linear model coefficients")->delimiter(',');
  cmd->add_option("--external", mf.external,
                  "external evaluator command (handshake protocol on stdin/stdout)");
}

void print_index_table(std::ostream& os, const sobolmd::IndexVector& sobol,
                       const sobolmd::IndexVector& closed) {
  const std::size_t q = sobol.size();
  os << "subset         sobol                   closed\n";
  for (std::size_t u = 0; u < q && u < 64; ++u) {
    std::string name = sobolmd::format_subset(static_cast<sobolmd::SubsetId>(u));
    name.resize(14, ' ');
    os << name << ' ' << sobolmd::format_double(sobol[u]) << "  "
       << sobolmd::format_double(closed[u]) << '\n';
  }
  if (q > 64) os << "(" << q - 64 << " more rows in the CSV output)\n";
}

int cmd_estimate(sobolmd::EstimateConfig cfg) {
  const sobolmd::EstimateOutput out = sobolmd::run_estimate(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  {
    std::ostringstream csv;
    sobolmd::write_estimates_csv(csv, out);
    write_text_file(std::filesystem::path(cfg.output_dir) / "estimates.csv", csv.str());
  }
  write_text_file(std::filesystem::path(cfg.output_dir) / "summary.json",
                  sobolmd::summary_json(cfg, out).dump(2) + "\n");
  std::cout << "model " << cfg.model.name << " p=" << cfg.model.p << " strategy="
            << cfg.strategy << " iterations=" << out.report.final_state.n
            << " evals=" << out.report.final_state.evals << '\n';
  print_index_table(std::cout, out.estimate, out.report.closed);
  std::cout << "wrote " << cfg.output_dir << "/estimates.csv and summary.json\n";
  return 0;
}

int cmd_bench(const sobolmd::BenchConfig& cfg) {
  const sobolmd::MseTable table = sobolmd::run_bench(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  {
    std::ostringstream csv;
    sobolmd::write_mse_csv(csv, table);
    write_text_file(std::filesystem::path(cfg.output_dir) / "mse.csv", csv.str());
  }
  {
    std::ostringstream csv;
    sobolmd::write_mse_aggregate_csv(csv, table);
    write_text_file(std::filesystem::path(cfg.output_dir) / "mse_aggregate.csv", csv.str());
  }
  std::cout << "reference: resolution " << table.reference.resolution << ", error bound "
            << sobolmd::format_double(table.reference.error_bound) << '\n';
  for (const auto& row : table.aggregate)
    std::cout << row.method << '/' << row.strategy << " horizon=" << row.horizon
              << " mse=" << sobolmd::format_double(row.mse) << '\n';
  std::cout << "wrote " << cfg.output_dir << "/mse.csv and mse_aggregate.csv\n";
  return 0;
}

int cmd_oracle(const sobolmd::ModelSpec& model, int resolution, const std::string& cache_dir,
               const std::string& output) {
  const sobolmd::ReferenceTable table = sobolmd::reference_with_cache(
      model, resolution,
      cache_dir.empty() ? std::filesystem::path{} : std::filesystem::path(cache_dir));
  std::cout << "model " << table.model << " p=" << table.p << " resolution="
            << table.resolution << '\n'
            << "mean " << sobolmd::format_double(table.mean) << ", variance "
            << sobolmd::format_double(table.variance) << ", refinement error bound "
            << sobolmd::format_double(table.error_bound) << '\n';
  print_index_table(std::cout, table.sobol, table.closed);
  std::cout << "total order:\n";
  for (int i = 0; i < table.p; ++i)
    std::cout << "  x" << i + 1 << " " << sobolmd::format_double(table.total[static_cast<std::size_t>(i)])
              << '\n';
  if (!output.empty()) {
    const nlohmann::json j = table;
    write_text_file(output, j.dump(2) + "\n");
    std::cout << "wrote " << output << '\n';
  }
  return 0;
}

int cmd_baseline(const sobolmd::BaselineConfig& cfg) {
  const sobolmd::BaselineOutput out = sobolmd::run_baseline(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  {
    std::ostringstream csv;
    sobolmd::write_baseline_csv(csv, cfg, out);
    write_text_file(std::filesystem::path(cfg.output_dir) / "estimates.csv", csv.str());
  }
  write_text_file(std::filesystem::path(cfg.output_dir) / "summary.json",
                  sobolmd::baseline_summary_json(cfg, out).dump(2) + "\n");
  std::cout << "pick-freeze baseline, " << out.result.pairs_per_subset
            << " pairs per subset, " << out.result.evals << " evaluations\n";
  print_index_table(std::cout, out.result.sobol_raw, out.result.closed);
  std::cout << "wrote " << cfg.output_dir << "/estimates.csv and summary.json\n";
  return 0;
}

int cmd_validate(const std::string& suite, int p, std::uint64_t seed) {
  bool all_pass = true;
  for (const sobolmd::ValidationResult& r : sobolmd::run_validation(suite, p, seed)) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.suite << ": " << r.detail << '\n';
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : kExitValidateFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"All-at-once Sobol index estimation by stochastic mirror descent"};
  app.require_subcommand(1);

  // estimate
  auto* est = app.add_subcommand("estimate", "run one mirror descent trajectory");
  std::string est_config;
  ModelFlags est_model;
  sobolmd::EstimateConfig est_cfg_flags;
  est->add_option("--config", est_config, "JSON config file");
  add_model_flags(est, est_model);
  est->add_option("--timeout", est_cfg_flags.timeout_seconds, "external evaluator timeout, seconds");
  est->add_option("--strategy", est_cfg_flags.strategy, "subset sampling: unif, S, 1/S, avg");
  est->add_option("--schedule", est_cfg_flags.schedule_kind, "step size rule: power, theorem");
  est->add_option("--eta0", est_cfg_flags.eta0, "power schedule scale");
  est->add_option("--alpha", est_cfg_flags.alpha, "power schedule exponent, in [0.5, 1]");
  est->add_option("--iterations", est_cfg_flags.iterations, "pick-freeze pairs to draw");
  est->add_option("--seed", est_cfg_flags.seed, "master seed");
  est->add_option("--snapshots", est_cfg_flags.snapshots, "trajectory rows in estimates.csv");
  est->add_option("--floor", est_cfg_flags.floor, "adaptive sampling weight floor");
  est->add_flag("--exclude-empty", est_cfg_flags.exclude_empty,
                "never sample the empty subset");
  est->add_option("--output-dir", est_cfg_flags.output_dir, "where to write results");
  est->add_option("--state-in", est_cfg_flags.state_in, "resume from a checkpoint file");
  est->add_option("--state-out", est_cfg_flags.state_out, "write a checkpoint file");

  // bench
  auto* ben = app.add_subcommand("bench", "replicated MSE study against the quadrature reference");
  std::string ben_config;
  ModelFlags ben_model;
  sobolmd::BenchConfig ben_cfg_flags;
  ben->add_option("--config", ben_config, "JSON config file");
  add_model_flags(ben, ben_model);
  ben->add_option("--strategies", ben_cfg_flags.strategies, "sampling strategies to compare")
      ->delimiter(',');
  bool ben_no_pf = false;
  ben->add_flag("--no-pf", ben_no_pf, "skip the pick-freeze baseline");
  ben->add_option("--pf-budget", ben_cfg_flags.pf_budget,
                  "match pick-freeze to 'iterations' or total 'evals'");
  ben->add_option("--eta0", ben_cfg_flags.eta0, "power schedule scale");
  ben->add_option("--alpha", ben_cfg_flags.alpha, "power schedule exponent");
  ben->add_option("--horizons", ben_cfg_flags.horizons, "iteration counts to report")
      ->delimiter(',');
  ben->add_option("--replicates", ben_cfg_flags.replicates, "independent runs per cell");
  ben->add_option("--seed", ben_cfg_flags.master_seed, "master seed");
  ben->add_option("--floor", ben_cfg_flags.floor, "adaptive sampling weight floor");
  ben->add_flag("--exclude-empty", ben_cfg_flags.exclude_empty, "never sample the empty subset");
  ben->add_option("--resolution", ben_cfg_flags.oracle_resolution,
                  "reference quadrature nodes per axis (0 = automatic)");
  ben->add_option("--cache-dir", ben_cfg_flags.cache_dir, "reference table cache directory");
  ben->add_option("--output-dir", ben_cfg_flags.output_dir, "where to write results");
  ben->add_option("--jobs", ben_cfg_flags.jobs, "worker threads (0 = hardware)");

  // oracle
  auto* ora = app.add_subcommand("oracle", "print the quadrature reference table");
  ModelFlags ora_model;
  int ora_resolution = 0;
  std::string ora_cache, ora_output;
  add_model_flags(ora, ora_model);
  ora->add_option("--resolution", ora_resolution, "nodes per axis (0 = automatic)");
  ora->add_option("--cache-dir", ora_cache, "reference table cache directory");
  ora->add_option("--output", ora_output, "also write the table as JSON");

  // baseline
  auto* bas = app.add_subcommand("baseline", "classical pick-freeze estimator, one design per subset");
  std::string bas_config;
  ModelFlags bas_model;
  sobolmd::BaselineConfig bas_cfg_flags;
  bas->add_option("--config", bas_config, "JSON config file");
  add_model_flags(bas, bas_model);
  bas->add_option("--timeout", bas_cfg_flags.timeout_seconds, "external evaluator timeout, seconds");
  bas->add_option("--pairs", bas_cfg_flags.pairs, "pick-freeze pairs per subset");
  bas->add_option("--seed", bas_cfg_flags.seed, "master seed");
  bas->add_option("--output-dir", bas_cfg_flags.output_dir, "where to write results");

  // validate
  auto* val = app.add_subcommand("validate", "run internal consistency suites");
  std::string val_suite = "all";
  int val_p = 3;
  std::uint64_t val_seed = 1;
  val->add_option("--suite", val_suite,
                  "all, inversion, spectrum, bregman, simplex, unbiasedness, hessian");
  val->add_option("--p", val_p, "problem size used by the suites");
  val->add_option("--seed", val_seed, "seed for randomized suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalidConfig;
  }

  try {
    if (est->parsed()) {
      sobolmd::EstimateConfig cfg;
      if (!est_config.empty())
        cfg = sobolmd::estimate_config_from_json(load_json_file(est_config));
      else if (est_model.name.empty() && est_model.external.empty())
        throw std::invalid_argument("estimate: need --config, --model or --external");
      apply_model_flags(cfg.model, est_model, est->count("--model") > 0,
                        est->count("--external") > 0);
      if (est->count("--strategy")) cfg.strategy = est_cfg_flags.strategy;
      if (est->count("--schedule")) cfg.schedule_kind = est_cfg_flags.schedule_kind;
      if (est->count("--eta0")) cfg.eta0 = est_cfg_flags.eta0;
      if (est->count("--alpha")) cfg.alpha = est_cfg_flags.alpha;
      if (est->count("--iterations")) cfg.iterations = est_cfg_flags.iterations;
      if (est->count("--seed")) cfg.seed = est_cfg_flags.seed;
      if (est->count("--snapshots")) cfg.snapshots = est_cfg_flags.snapshots;
      if (est->count("--floor")) cfg.floor = est_cfg_flags.floor;
      if (est->count("--exclude-empty")) cfg.exclude_empty = true;
      if (est->count("--timeout")) cfg.timeout_seconds = est_cfg_flags.timeout_seconds;
      if (est->count("--output-dir")) cfg.output_dir = est_cfg_flags.output_dir;
      if (est->count("--state-in")) cfg.state_in = est_cfg_flags.state_in;
      if (est->count("--state-out")) cfg.state_out = est_cfg_flags.state_out;
      return cmd_estimate(std::move(cfg));
    }
    if (ben->parsed()) {
      sobolmd::BenchConfig cfg;
      if (!ben_config.empty())
        cfg = sobolmd::bench_config_from_json(load_json_file(ben_config));
      else if (ben_model.name.empty() && ben_model.external.empty())
        throw std::invalid_argument("bench: need --config, --model or --external");
      apply_model_flags(cfg.model, ben_model, ben->count("--model") > 0,
                        ben->count("--external") > 0);
      if (ben->count("--strategies")) cfg.strategies = ben_cfg_flags.strategies;
      if (ben_no_pf) cfg.include_pf1 = false;
      if (ben->count("--pf-budget")) cfg.pf_budget = ben_cfg_flags.pf_budget;
      if (ben->count("--eta0")) cfg.eta0 = ben_cfg_flags.eta0;
      if (ben->count("--alpha")) cfg.alpha = ben_cfg_flags.alpha;
      if (ben->count("--horizons")) cfg.horizons = ben_cfg_flags.horizons;
      if (ben->count("--replicates")) cfg.replicates = ben_cfg_flags.replicates;
      if (ben->count("--seed")) cfg.master_seed = ben_cfg_flags.master_seed;
      if (ben->count("--floor")) cfg.floor = ben_cfg_flags.floor;
      if (ben->count("--exclude-empty")) cfg.exclude_empty = true;
      if (ben->count("--resolution")) cfg.oracle_resolution = ben_cfg_flags.oracle_resolution;
      if (ben->count("--cache-dir")) cfg.cache_dir = ben_cfg_flags.cache_dir;
      if (ben->count("--output-dir")) cfg.output_dir = ben_cfg_flags.output_dir;
      if (ben->count("--jobs")) cfg.jobs = ben_cfg_flags.jobs;
      return cmd_bench(cfg);
    }
    if (ora->parsed()) {
      if (ora_model.name.empty() && ora_model.external.empty())
        throw std::invalid_argument("oracle: need --model or --external");
      sobolmd::ModelSpec model;
      apply_model_flags(model, ora_model, ora->count("--model") > 0,
                        ora->count("--external") > 0);
      return cmd_oracle(model, ora_resolution, ora_cache, ora_output);
    }
    if (bas->parsed()) {
      sobolmd::BaselineConfig cfg;
      if (!bas_config.empty()) {
        const nlohmann::json j = load_json_file(bas_config);
        sobolmd::require_known_keys(
            j, {"model", "pairs", "seed", "timeout_seconds", "output_dir"}, "baseline config");
        cfg.model = sobolmd::model_from_json(j.at("model"));
        cfg.pairs = j.value("pairs", cfg.pairs);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.timeout_seconds = j.value("timeout_seconds", cfg.timeout_seconds);
        cfg.output_dir = j.value("output_dir", cfg.output_dir);
      } else if (bas_model.name.empty() && bas_model.external.empty()) {
        throw std::invalid_argument("baseline: need --config, --model or --external");
      }
      apply_model_flags(cfg.model, bas_model, bas->count("--model") > 0,
                        bas->count("--external") > 0);
      if (bas->count("--pairs")) cfg.pairs = bas_cfg_flags.pairs;
      if (bas->count("--seed")) cfg.seed = bas_cfg_flags.seed;
      if (bas->count("--timeout")) cfg.timeout_seconds = bas_cfg_flags.timeout_seconds;
      if (bas->count("--output-dir")) cfg.output_dir = bas_cfg_flags.output_dir;
      return cmd_baseline(cfg);
    }
    if (val->parsed()) return cmd_validate(val_suite, val_p, val_seed);
  } catch (const sobolmd::MissingOracleError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissingOracle;
  } catch (const sobolmd::EvaluationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitEvaluation;
  } catch (const sobolmd::DegenerateSampleError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitEvaluation;
  } catch (const sobolmd::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitEvaluation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalidConfig;
  }
  return 0;
}

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sobolmd/baseline_pf.hpp"
#include "sobolmd/errors.hpp"
#include "sobolmd/external_process.hpp"
#include "sobolmd/mirror.hpp"
#include "sobolmd/models.hpp"
#include "sobolmd/oracle.hpp"

namespace sobolmd {

// Fixed float formatting (round-trip exact) so reruns are byte identical.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Runs fn(r) for r in [0, count) on a small thread pool. Callers write
// results into per-replicate slots, so the merged output never depends on
// scheduling. The first worker exception is rethrown after the join.
template <class Fn>
inline void parallel_replicates(int count, int jobs, Fn&& fn) {
  if (count <= 0) return;
  if (jobs <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    jobs = hw == 0 ? 1 : static_cast<int>(hw);
  }
  jobs = std::min(jobs, count);
  if (jobs == 1) {
    for (int r = 0; r < count; ++r) fn(r);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= count) return;
      try {
        fn(r);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(jobs));
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Strategy labels used across the CLI and result files: "unif" (fixed
// uniform law), "S" (proportional to the iterate), "1/S" (inverse), "avg"
// (uniform law, Cesaro-averaged output).
struct StrategyChoice {
  std::string label;
  SamplingStrategy strategy;
  bool averaging = false;
};

inline StrategyChoice strategy_from_label(const std::string& label, const SubsetUniverse& uni,
                                          double floor, bool exclude_empty) {
  StrategyChoice c;
  c.label = label;
  if (label == "unif")
    c.strategy = SamplingStrategy::uniform_all(uni, exclude_empty);
  else if (label == "avg") {
    c.strategy = SamplingStrategy::uniform_all(uni, exclude_empty);
    c.averaging = true;
  } else if (label == "S")
    c.strategy = SamplingStrategy::proportional(floor, exclude_empty);
  else if (label == "1/S")
    c.strategy = SamplingStrategy::inverse(floor, exclude_empty);
  else
    throw std::invalid_argument("unknown sampling strategy '" + label +
                                "' (expected unif, S, 1/S or avg)");
  return c;
}

// ---- JSON config pieces --------------------------------------------------

inline InputLaw input_law_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "uniform")
    return InputLaw::make_uniform(j.at("a").get<double>(), j.at("b").get<double>());
  if (kind == "gaussian")
    return InputLaw::make_gaussian(j.at("a").get<double>(), j.at("b").get<double>());
  throw std::invalid_argument("input law kind must be 'uniform' or 'gaussian'");
}

inline nlohmann::json input_law_to_json(const InputLaw& law) {
  return nlohmann::json{
      {"kind", law.kind == InputLaw::Kind::uniform ? "uniform" : "gaussian"},
      {"a", law.a},
      {"b", law.b}};
}

inline ModelSpec model_from_json(const nlohmann::json& j) {
  if (j.contains("external")) {
    auto command = j.at("external").get<std::vector<std::string>>();
    const int p = j.at("p").get<int>();
    std::vector<InputLaw> laws;
    if (j.contains("laws"))
      for (const auto& lj : j.at("laws")) laws.push_back(input_law_from_json(lj));
    else
      laws.assign(static_cast<std::size_t>(std::max(p, 0)), InputLaw::make_uniform(0.0, 1.0));
    return make_external_model(std::move(command), p, std::move(laws));
  }
  ModelSpec m = make_builtin_model(j.at("name").get<std::string>(),
                                   j.value("p", 0),
                                   j.value("params", std::vector<double>{}));
  if (j.contains("laws")) {
    std::vector<InputLaw> laws;
    for (const auto& lj : j.at("laws")) laws.push_back(input_law_from_json(lj));
    m.input_laws = std::move(laws);
    validate_model(m);
  }
  return m;
}

inline nlohmann::json model_to_json(const ModelSpec& m) {
  nlohmann::json j{{"name", m.name}, {"p", m.p}};
  if (!m.params.empty()) j["params"] = m.params;
  if (m.is_external()) j["external"] = m.external_command;
  nlohmann::json laws = nlohmann::json::array();
  for (const InputLaw& law : m.input_laws) laws.push_back(input_law_to_json(law));
  j["laws"] = laws;
  return j;
}

// ---- estimate ------------------------------------------------------------

struct EstimateConfig {
  ModelSpec model;
  std::string strategy = "unif";
  std::string schedule_kind = "power";  // "power" | "theorem"
  double eta0 = 0.3;
  double alpha = 0.5;
  std::uint64_t iterations = 1000;
  std::uint64_t seed = 1;
  int snapshots = 0;  // geometrically spaced trajectory rows, 0 = final only
  double floor = 1e-6;
  bool exclude_empty = false;
  double timeout_seconds = 30.0;
  std::string output_dir = ".";
  std::string state_in;   // resume checkpoint
  std::string state_out;  // write checkpoint at the end
};

struct EstimateOutput {
  bool averaging = false;
  IndexVector estimate;  // the emitted vector: Cesaro average for "avg"
  RunReport report;
  double wall_seconds = 0.0;
};

inline StepSchedule schedule_for(const EstimateConfig& cfg, const SamplingStrategy& strat,
                                 const SubsetUniverse& uni) {
  if (cfg.schedule_kind == "power") return StepSchedule::power(cfg.eta0, cfg.alpha);
  if (cfg.schedule_kind == "theorem") {
    const IndexVector a0 = resolve_weights(strat, uniform_init(uni));
    return StepSchedule::theorem_constant(a0, cfg.iterations);
  }
  throw std::invalid_argument("unknown schedule kind '" + cfg.schedule_kind +
                              "' (expected power or theorem)");
}

inline EstimateOutput run_estimate(const EstimateConfig& cfg) {
  validate_model(cfg.model);
  if (cfg.iterations == 0)
    throw std::invalid_argument("estimate: iterations must be positive");
  const SubsetUniverse uni(cfg.model.p);
  const StrategyChoice choice =
      strategy_from_label(cfg.strategy, uni, cfg.floor, cfg.exclude_empty);
  const StepSchedule schedule = schedule_for(cfg, choice.strategy, uni);
  const auto evaluator = make_evaluator(cfg.model, cfg.timeout_seconds);

  const auto t0 = std::chrono::steady_clock::now();
  MirrorEstimator est(cfg.model, *evaluator, choice.strategy, schedule, cfg.seed);
  if (!cfg.state_in.empty()) {
    std::ifstream in(cfg.state_in);
    if (!in) throw std::invalid_argument("estimate: cannot read state file " + cfg.state_in);
    nlohmann::json j;
    in >> j;
    est.load_state(j);
  }
  if (est.state().n >= cfg.iterations)
    throw std::invalid_argument("estimate: resumed state is already past the horizon");

  std::vector<std::uint64_t> checkpoints =
      cfg.snapshots > 0 ? geometric_checkpoints(cfg.iterations, cfg.snapshots)
                        : std::vector<std::uint64_t>{};
  EstimateOutput out;
  out.averaging = choice.averaging;
  std::size_t next_cp = 0;
  while (next_cp < checkpoints.size() && checkpoints[next_cp] <= est.state().n) ++next_cp;
  while (est.state().n < cfg.iterations) {
    est.advance();
    if (next_cp < checkpoints.size() && checkpoints[next_cp] == est.state().n) {
      TrajectorySnapshot snap;
      snap.n = est.state().n;
      snap.s_hat = est.state().s_hat;
      if (choice.averaging) snap.cesaro = est.cesaro_average();
      out.report.snapshots.push_back(std::move(snap));
      ++next_cp;
    }
  }
  out.report.final_state = est.state();
  if (choice.averaging) out.report.cesaro = est.cesaro_average();
  out.estimate = choice.averaging ? out.report.cesaro : out.report.final_state.s_hat;
  out.report.closed = zeta_transform(out.estimate);
  out.report.total = total_order_indices(out.report.closed);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!cfg.state_out.empty()) {
    std::ofstream o(cfg.state_out);
    if (!o) throw std::invalid_argument("estimate: cannot write state file " + cfg.state_out);
    o << est.save_state().dump(2) << '\n';
  }
  return out;
}

// estimates.csv schema shared by the estimate and baseline commands.
inline void write_estimates_header(std::ostream& os) {
  os << "replicate,n,subset_mask,subset,sobol_estimate,closed_estimate\n";
}

inline void write_estimate_rows(std::ostream& os, int replicate, std::uint64_t n,
                                const IndexVector& sobol, const IndexVector& closed) {
  for (std::size_t u = 0; u < sobol.size(); ++u)
    os << replicate << ',' << n << ',' << u << ",\"" << format_subset(static_cast<SubsetId>(u))
       << "\"," << format_double(sobol[u]) << ',' << format_double(closed[u]) << '\n';
}

inline void write_estimates_csv(std::ostream& os, const EstimateOutput& out) {
  write_estimates_header(os);
  for (const TrajectorySnapshot& snap : out.report.snapshots) {
    const IndexVector& s = out.averaging ? snap.cesaro : snap.s_hat;
    write_estimate_rows(os, 0, snap.n, s, zeta_transform(s));
  }
  const std::uint64_t n_final = out.report.final_state.n;
  if (out.report.snapshots.empty() || out.report.snapshots.back().n != n_final)
    write_estimate_rows(os, 0, n_final, out.estimate, out.report.closed);
}

inline nlohmann::json summary_json(const EstimateConfig& cfg, const EstimateOutput& out) {
  nlohmann::json j{{"model", model_to_json(cfg.model)},
                   {"strategy", cfg.strategy},
                   {"schedule", cfg.schedule_kind},
                   {"iterations", out.report.final_state.n},
                   {"seed", cfg.seed},
                   {"sobol", out.report.final_state.s_hat},
                   {"closed", out.report.closed},
                   {"total", out.report.total},
                   {"mean", out.report.final_state.m_hat},
                   {"evals", out.report.final_state.evals},
                   {"wall_seconds", out.wall_seconds}};
  if (out.averaging) j["cesaro"] = out.report.cesaro;
  return j;
}

// ---- baseline ------------------------------------------------------------

struct BaselineConfig {
  ModelSpec model;
  std::uint64_t pairs = 1000;
  std::uint64_t seed = 1;
  double timeout_seconds = 30.0;
  std::string output_dir = ".";
};

struct BaselineOutput {
  Pf1Result result;
  double wall_seconds = 0.0;
};

inline BaselineOutput run_baseline(const BaselineConfig& cfg) {
  validate_model(cfg.model);
  const auto evaluator = make_evaluator(cfg.model, cfg.timeout_seconds);
  const auto t0 = std::chrono::steady_clock::now();
  BaselineOutput out;
  out.result = pf1_all(cfg.model, *evaluator, cfg.pairs, cfg.seed);
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline void write_baseline_csv(std::ostream& os, const BaselineConfig& cfg,
                               const BaselineOutput& out) {
  write_estimates_header(os);
  write_estimate_rows(os, 0, cfg.pairs, out.result.sobol_raw, out.result.closed);
}

inline nlohmann::json baseline_summary_json(const BaselineConfig& cfg,
                                            const BaselineOutput& out) {
  return nlohmann::json{{"model", model_to_json(cfg.model)},
                        {"method", "pf1"},
                        {"pairs_per_subset", out.result.pairs_per_subset},
                        {"seed", cfg.seed},
                        {"closed", out.result.closed},
                        {"sobol_raw", out.result.sobol_raw},
                        {"evals", out.result.evals},
                        {"wall_seconds", out.wall_seconds}};
}

// ---- bench (replicated MSE study) -----------------------------------------

struct BenchConfig {
  ModelSpec model;
  std::vector<std::string> strategies = {"unif", "S", "1/S", "avg"};
  bool include_pf1 = true;
  std::string pf_budget = "iterations";  // iterations: N = n/2^p; evals: N = n/(2^p - 1)
  double eta0 = 0.3;
  double alpha = 0.5;
  std::vector<std::uint64_t> horizons;
  int replicates = 100;
  std::uint64_t master_seed = 1;
  double floor = 1e-6;
  bool exclude_empty = false;
  int oracle_resolution = 0;
  std::string cache_dir;
  std::string output_dir = ".";
  int jobs = 0;
};

inline void validate_bench_config(const BenchConfig& cfg) {
  validate_model(cfg.model);
  if (cfg.horizons.empty())
    throw std::invalid_argument("bench: need at least one horizon");
  for (std::size_t i = 0; i < cfg.horizons.size(); ++i) {
    if (cfg.horizons[i] == 0)
      throw std::invalid_argument("bench: horizons must be positive");
    if (i > 0 && cfg.horizons[i] <= cfg.horizons[i - 1])
      throw std::invalid_argument("bench: horizons must be strictly increasing");
  }
  if (cfg.replicates < 1)
    throw std::invalid_argument("bench: need at least one replicate");
  if (cfg.strategies.empty() && !cfg.include_pf1)
    throw std::invalid_argument("bench: nothing to run");
  if (cfg.pf_budget != "iterations" && cfg.pf_budget != "evals")
    throw std::invalid_argument("bench: pf_budget must be 'iterations' or 'evals'");
}

inline std::uint64_t pf_pairs_for_horizon(const BenchConfig& cfg, std::uint64_t horizon) {
  const std::uint64_t q = std::uint64_t{1} << cfg.model.p;
  std::uint64_t n;
  if (cfg.pf_budget == "iterations")
    n = horizon / q;  // same pair count per subset as the mirror iteration count / 2^p
  else
    n = (2 * horizon + (2 * (q - 1)) / 2) / (2 * (q - 1));  // match total evals, rounded
  return std::max<std::uint64_t>(n, 2);
}

struct MseTable {
  struct Row {
    std::string method, strategy;
    std::uint64_t horizon;
    SubsetId mask;
    double mse;
  };
  struct Aggregate {
    std::string method, strategy;
    std::uint64_t horizon;
    double mse;
  };
  std::vector<Row> rows;
  std::vector<Aggregate> aggregate;
  ReferenceTable reference;
};

namespace detail {

// Per (method x strategy) block: closed-index estimates for every replicate
// and horizon, reduced to MSE rows against the reference.
inline void append_mse_block(MseTable& table, const std::string& method,
                             const std::string& strategy,
                             const std::vector<std::uint64_t>& horizons,
                             const std::vector<std::vector<IndexVector>>& estimates,
                             const IndexVector& reference_closed) {
  const std::size_t q = reference_closed.size();
  for (std::size_t h = 0; h < horizons.size(); ++h) {
    double aggregate = 0.0;
    for (std::size_t u = 0; u < q; ++u) {
      double acc = 0.0;
      for (const auto& per_replicate : estimates) {
        const double d = per_replicate[h][u] - reference_closed[u];
        acc += d * d;
      }
      const double mse = acc / static_cast<double>(estimates.size());
      aggregate += mse;
      table.rows.push_back({method, strategy, horizons[h], static_cast<SubsetId>(u), mse});
    }
    table.aggregate.push_back({method, strategy, horizons[h], aggregate / static_cast<double>(q)});
  }
}

}  // namespace detail

// Replicated MSE study against the quadrature reference. Closed indices are
// compared (the mirror iterate is mapped through subset sums; PF1 already
// estimates closed indices). Replicate r of stream k uses the seed
// derive_seed(derive_seed(master_seed, k), r); streams are numbered in run
// order (mirror strategies in config order, then PF1 blocks per horizon), so
// a given config yields the same draws no matter how many jobs run.
inline MseTable run_bench(const BenchConfig& cfg) {
  validate_bench_config(cfg);
  MseTable table;
  table.reference = reference_with_cache(
      cfg.model, cfg.oracle_resolution,
      cfg.cache_dir.empty() ? std::filesystem::path{} : std::filesystem::path(cfg.cache_dir));
  const SubsetUniverse uni(cfg.model.p);
  const std::uint64_t max_horizon = cfg.horizons.back();
  std::uint64_t stream = 0;

  for (const std::string& label : cfg.strategies) {
    const StrategyChoice choice =
        strategy_from_label(label, uni, cfg.floor, cfg.exclude_empty);
    const StepSchedule schedule = StepSchedule::power(cfg.eta0, cfg.alpha);
    std::vector<std::vector<IndexVector>> estimates(
        static_cast<std::size_t>(cfg.replicates));
    const std::uint64_t stream_seed = derive_seed(cfg.master_seed, stream++);
    parallel_replicates(cfg.replicates, cfg.jobs, [&](int r) {
      BuiltinEvaluator f(cfg.model);
      const RunReport rep =
          run_mirror(cfg.model, f, choice.strategy, schedule, max_horizon,
                     derive_seed(stream_seed, static_cast<std::uint64_t>(r)),
                     choice.averaging, cfg.horizons);
      std::vector<IndexVector> per_horizon;
      per_horizon.reserve(cfg.horizons.size());
      for (const TrajectorySnapshot& snap : rep.snapshots)
        per_horizon.push_back(zeta_transform(choice.averaging ? snap.cesaro : snap.s_hat));
      estimates[static_cast<std::size_t>(r)] = std::move(per_horizon);
    });
    detail::append_mse_block(table, "mirror", label, cfg.horizons, estimates,
                             table.reference.closed);
  }

  if (cfg.include_pf1) {
    std::vector<std::vector<IndexVector>> estimates(
        static_cast<std::size_t>(cfg.replicates),
        std::vector<IndexVector>(cfg.horizons.size()));
    for (std::size_t h = 0; h < cfg.horizons.size(); ++h) {
      const std::uint64_t pairs = pf_pairs_for_horizon(cfg, cfg.horizons[h]);
      const std::uint64_t stream_seed = derive_seed(cfg.master_seed, stream++);
      parallel_replicates(cfg.replicates, cfg.jobs, [&](int r) {
        BuiltinEvaluator f(cfg.model);
        const Pf1Result res = pf1_all(cfg.model, f, pairs,
                                      derive_seed(stream_seed, static_cast<std::uint64_t>(r)));
        estimates[static_cast<std::size_t>(r)][h] = res.closed;
      });
    }
    detail::append_mse_block(table, "pf1", "budget-" + cfg.pf_budget, cfg.horizons,
                             estimates, table.reference.closed);
  }
  return table;
}

inline void write_mse_csv(std::ostream& os, const MseTable& table) {
  os << "method,strategy,horizon,subset_mask,mse\n";
  for (const MseTable::Row& row : table.rows)
    os << row.method << ',' << row.strategy << ',' << row.horizon << ',' << row.mask << ','
       << format_double(row.mse) << '\n';
}

inline void write_mse_aggregate_csv(std::ostream& os, const MseTable& table) {
  os << "method,strategy,horizon,mse\n";
  for (const MseTable::Aggregate& row : table.aggregate)
    os << row.method << ',' << row.strategy << ',' << row.horizon << ','
       << format_double(row.mse) << '\n';
}

// ---- JSON config loading ---------------------------------------------------

inline void require_known_keys(const nlohmann::json& j,
                               std::initializer_list<const char*> known,
                               const char* where) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw std::invalid_argument(std::string(where) + ": unknown config key '" +
                                  item.key() + "'");
  }
}

inline BenchConfig bench_config_from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"model", "strategies", "include_pf1", "pf_budget", "eta0", "alpha",
                      "horizons", "replicates", "seed", "floor", "exclude_empty",
                      "oracle_resolution", "cache_dir", "output_dir", "jobs"},
                     "bench config");
  BenchConfig cfg;
  cfg.model = model_from_json(j.at("model"));
  if (j.contains("strategies")) cfg.strategies = j.at("strategies").get<std::vector<std::string>>();
  cfg.include_pf1 = j.value("include_pf1", cfg.include_pf1);
  cfg.pf_budget = j.value("pf_budget", cfg.pf_budget);
  cfg.eta0 = j.value("eta0", cfg.eta0);
  cfg.alpha = j.value("alpha", cfg.alpha);
  if (j.contains("horizons")) cfg.horizons = j.at("horizons").get<std::vector<std::uint64_t>>();
  cfg.replicates = j.value("replicates", cfg.replicates);
  cfg.master_seed = j.value("seed", cfg.master_seed);
  cfg.floor = j.value("floor", cfg.floor);
  cfg.exclude_empty = j.value("exclude_empty", cfg.exclude_empty);
  cfg.oracle_resolution = j.value("oracle_resolution", cfg.oracle_resolution);
  cfg.cache_dir = j.value("cache_dir", cfg.cache_dir);
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.jobs = j.value("jobs", cfg.jobs);
  return cfg;
}

inline EstimateConfig estimate_config_from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"model", "strategy", "schedule", "eta0", "alpha", "iterations", "seed",
                      "snapshots", "floor", "exclude_empty", "timeout_seconds", "output_dir",
                      "state_in", "state_out"},
                     "estimate config");
  EstimateConfig cfg;
  cfg.model = model_from_json(j.at("model"));
  cfg.strategy = j.value("strategy", cfg.strategy);
  cfg.schedule_kind = j.value("schedule", cfg.schedule_kind);
  cfg.eta0 = j.value("eta0", cfg.eta0);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.snapshots = j.value("snapshots", cfg.snapshots);
  cfg.floor = j.value("floor", cfg.floor);
  cfg.exclude_empty = j.value("exclude_empty", cfg.exclude_empty);
  cfg.timeout_seconds = j.value("timeout_seconds", cfg.timeout_seconds);
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.state_in = j.value("state_in", cfg.state_in);
  cfg.state_out = j.value("state_out", cfg.state_out);
  return cfg;
}

}  // namespace sobolmd

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sobolmd/errors.hpp"
#include "sobolmd/models.hpp"
#include "sobolmd/numerics.hpp"
#include "sobolmd/subset_algebra.hpp"

namespace sobolmd {

// Reference values for a builtin model: closed indices for every subset,
// interaction (Sobol) indices, total-order indices per variable, and a
// Richardson-style error bound from halving the quadrature resolution.
struct ReferenceTable {
  std::string model;
  std::vector<double> params;
  int p = 0;
  int resolution = 0;  // nodes per axis actually used (per side on split axes)
  double mean = 0.0;
  double variance = 0.0;
  double error_bound = 0.0;
  IndexVector closed;
  IndexVector sobol;
  std::vector<double> total;
};

namespace quad {

inline constexpr std::size_t grid_cap = std::size_t{1} << 24;
inline constexpr double gaussian_panel_halfwidth = 13.0;  // sigmas; tail mass ~1e-37

struct AxisRule {
  std::vector<double> nodes;
  std::vector<double> weights;  // law included; renormalized to sum 1
};

// Gauss nodes/weights from the symmetric Jacobi matrix of the orthogonal
// polynomial recurrence (Golub-Welsch). mass is the total integral of the
// weight function.
inline void golub_welsch(const std::vector<double>& offdiag, double mass,
                         std::vector<double>& nodes, std::vector<double>& weights) {
  const int n = static_cast<int>(offdiag.size()) + 1;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) {
    jac(i, i + 1) = offdiag[i];
    jac(i + 1, i) = offdiag[i];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    weights[i] = mass * v0 * v0;
  }
}

// Gauss-Legendre on [-1,1], weight function 1 (mass 2).
inline AxisRule legendre_reference(int n) {
  if (n < 1) throw std::invalid_argument("legendre_reference: need n >= 1");
  std::vector<double> off(n - 1);
  for (int k = 1; k < n; ++k)
    off[k - 1] = k / std::sqrt(4.0 * k * k - 1.0);
  AxisRule r;
  golub_welsch(off, 2.0, r.nodes, r.weights);
  return r;
}

// Probabilists' Gauss-Hermite: weight exp(-x^2/2)/sqrt(2 pi), mass 1.
inline AxisRule hermite_reference(int n) {
  if (n < 1) throw std::invalid_argument("hermite_reference: need n >= 1");
  std::vector<double> off(n - 1);
  for (int k = 1; k < n; ++k) off[k - 1] = std::sqrt(static_cast<double>(k));
  AxisRule r;
  golub_welsch(off, 1.0, r.nodes, r.weights);
  return r;
}

inline double gaussian_density(double z, double mu, double sigma) {
  const double t = (z - mu) / sigma;
  return std::exp(-0.5 * t * t) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

// Appends an n-node Gauss-Legendre panel on [a,b] against density(z).
template <class Density>
inline void append_panel(AxisRule& axis, const AxisRule& ref, double a, double b,
                         Density&& density) {
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  for (std::size_t i = 0; i < ref.nodes.size(); ++i) {
    const double z = mid + half * ref.nodes[i];
    axis.nodes.push_back(z);
    axis.weights.push_back(ref.weights[i] * half * density(z));
  }
}

// Quadrature rule for one input coordinate: n nodes for a smooth law, n per
// side of the split point for a law whose integrand jumps there.
inline AxisRule axis_rule(const InputLaw& law, int n, std::optional<double> split) {
  if (n < 1) throw std::invalid_argument("axis_rule: need n >= 1");
  AxisRule axis;
  if (law.kind == InputLaw::Kind::uniform) {
    const AxisRule ref = legendre_reference(n);
    const double density = 1.0 / (law.b - law.a);
    if (split && *split > law.a && *split < law.b) {
      append_panel(axis, ref, law.a, *split, [&](double) { return density; });
      append_panel(axis, ref, *split, law.b, [&](double) { return density; });
    } else {
      append_panel(axis, ref, law.a, law.b, [&](double) { return density; });
    }
  } else {
    const double lo = law.a - gaussian_panel_halfwidth * law.b;
    const double hi = law.a + gaussian_panel_halfwidth * law.b;
    if (split && *split > lo && *split < hi) {
      const AxisRule ref = legendre_reference(n);
      auto density = [&](double z) { return gaussian_density(z, law.a, law.b); };
      append_panel(axis, ref, lo, *split, density);
      append_panel(axis, ref, *split, hi, density);
    } else {
      const AxisRule ref = hermite_reference(n);
      axis.nodes.resize(ref.nodes.size());
      axis.weights = ref.weights;
      for (std::size_t i = 0; i < ref.nodes.size(); ++i)
        axis.nodes[i] = law.a + law.b * ref.nodes[i];
    }
  }
  const double mass = compensated_sum(axis.weights);
  for (double& w : axis.weights) w /= mass;
  return axis;
}

// Integrates out one axis of a flat row-major tensor (axis 0 slowest).
inline void contract_axis(std::vector<double>& vals, std::vector<std::size_t>& dims,
                          std::size_t pos, const std::vector<double>& w) {
  const std::size_t n = dims[pos];
  std::size_t outer = 1, inner = 1;
  for (std::size_t j = 0; j < pos; ++j) outer *= dims[j];
  for (std::size_t j = pos + 1; j < dims.size(); ++j) inner *= dims[j];
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t src_base = o * n * inner;
    const std::size_t dst_base = o * inner;
    for (std::size_t k = 0; k < n; ++k) {
      const double wk = w[k];
      const double* src = vals.data() + src_base + k * inner;
      double* dst = out.data() + dst_base;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += wk * src[i];
    }
  }
  vals.swap(out);
  dims.erase(dims.begin() + static_cast<std::ptrdiff_t>(pos));
}

}  // namespace quad

// Split points per axis for builtins whose output jumps along a coordinate.
inline std::vector<std::optional<double>> oracle_split_points(const ModelSpec& m) {
  std::vector<std::optional<double>> splits(m.p);
  if (m.name == "disc" || m.name == "disc2") splits[2] = 0.0;
  return splits;
}

// Largest supported resolution whose product grid fits the memory cap.
inline int oracle_auto_resolution(const ModelSpec& m) {
  const auto splits = oracle_split_points(m);
  for (int r : {64, 48, 32, 24, 16, 12, 8}) {
    std::size_t total = 1;
    bool fits = true;
    for (int i = 0; i < m.p && fits; ++i) {
      const std::size_t axis = splits[i] ? 2 * static_cast<std::size_t>(r)
                                         : static_cast<std::size_t>(r);
      if (total > quad::grid_cap / axis) fits = false;
      total *= axis;
    }
    if (fits) return r;
  }
  throw CapacityError("oracle_auto_resolution: no supported resolution fits p = " +
                      std::to_string(m.p));
}

namespace detail {

// Tensor-product quadrature table at one resolution. Evaluates the model
// once on the full product grid, then forms every closed index by axis
// contractions: summing out the complement axes yields the conditional mean
// tensor, whose weighted second moment gives the conditional variance.
struct QuadratureTable {
  double mean = 0.0;
  double variance = 0.0;
  IndexVector raw_conditional_variance;  // per subset, unnormalized
};

inline QuadratureTable quadrature_pass(const ModelSpec& m, int resolution) {
  const SubsetUniverse uni(m.p);
  const auto splits = oracle_split_points(m);
  std::vector<quad::AxisRule> axes(m.p);
  std::vector<std::size_t> dims(m.p);
  std::size_t total = 1;
  for (int i = 0; i < m.p; ++i) {
    axes[i] = quad::axis_rule(m.input_laws[i], resolution, splits[i]);
    dims[i] = axes[i].nodes.size();
    if (total > quad::grid_cap / dims[i])
      throw CapacityError("quadrature grid exceeds the cap of 2^24 entries; lower the resolution");
    total *= dims[i];
  }

  BuiltinEvaluator f(m);
  std::vector<double> grid(total);
  std::vector<std::size_t> idx(m.p, 0);
  std::vector<double> x(m.p);
  for (int i = 0; i < m.p; ++i) x[i] = axes[i].nodes[0];
  for (std::size_t pos = 0;; ++pos) {
    grid[pos] = f.evaluate(x);
    int j = m.p - 1;
    for (; j >= 0; --j) {
      if (++idx[j] < dims[j]) {
        x[j] = axes[j].nodes[idx[j]];
        break;
      }
      idx[j] = 0;
      x[j] = axes[j].nodes[0];
    }
    if (j < 0) break;
  }

  QuadratureTable table;
  table.raw_conditional_variance.assign(uni.q, 0.0);
  {
    std::vector<double> vals = grid;
    std::vector<std::size_t> d = dims;
    for (int j = m.p - 1; j >= 0; --j)
      quad::contract_axis(vals, d, static_cast<std::size_t>(j), axes[j].weights);
    table.mean = vals[0];
  }
  for (SubsetId u = 1; u < uni.q; ++u) {
    std::vector<double> vals = grid;
    std::vector<std::size_t> d = dims;
    // complement axes out first (descending keeps positions stable), square,
    // then the remaining axes down to a scalar second moment
    for (int j = m.p - 1; j >= 0; --j)
      if (!((u >> j) & 1u))
        quad::contract_axis(vals, d, static_cast<std::size_t>(j), axes[j].weights);
    for (double& v : vals) v *= v;
    for (int j = m.p - 1; j >= 0; --j)
      if ((u >> j) & 1u) {
        quad::contract_axis(vals, d, static_cast<std::size_t>(d.size() - 1), axes[j].weights);
      }
    table.raw_conditional_variance[u] = vals[0] - table.mean * table.mean;
  }
  table.variance = table.raw_conditional_variance[uni.full()];
  return table;
}

}  // namespace detail

// Interaction (Sobol) coordinates from closed ones. Negative round-off down
// to -clip_tol is clipped to 0 and the result is renormalized when its total
// lands within sum_tol of 1; anything worse is a genuinely inconsistent
// input and throws.
inline IndexVector sobol_from_closed(const IndexVector& closed, double clip_tol = 1e-10,
                                     double sum_tol = 1e-6) {
  detail::infer_p(closed.size());
  if (std::fabs(closed[0]) > clip_tol)
    throw std::domain_error("sobol_from_closed: closed index of the empty set must be 0");
  IndexVector s = closed;
  mobius_transform_inplace(s);
  for (double& v : s) {
    if (v < 0.0) {
      if (v < -clip_tol)
        throw std::domain_error("sobol_from_closed: inconsistent closed indices (negative interaction weight)");
      v = 0.0;
    }
  }
  s[0] = 0.0;
  const double total = compensated_sum(s);
  if (std::fabs(total - 1.0) > sum_tol)
    throw std::domain_error("sobol_from_closed: interaction weights do not sum to 1");
  for (double& v : s) v /= total;
  return s;
}

// Reference table by tensor quadrature, with a Richardson error estimate
// from recomputing at half the resolution. resolution 0 picks the largest
// supported value that fits the grid cap.
inline ReferenceTable closed_indices_reference(const ModelSpec& m, int resolution = 0) {
  validate_model(m);
  if (m.is_external())
    throw MissingOracleError("closed_indices_reference: external models have no quadrature oracle");
  const int r = resolution == 0 ? oracle_auto_resolution(m) : resolution;
  if (r < 2) throw std::invalid_argument("closed_indices_reference: resolution must be at least 2");

  const detail::QuadratureTable fine = detail::quadrature_pass(m, r);
  const detail::QuadratureTable coarse = detail::quadrature_pass(m, std::max(r / 2, 1));
  if (!(fine.variance > 0.0))
    throw std::domain_error("closed_indices_reference: model output variance is zero");

  ReferenceTable table;
  table.model = m.name;
  table.params = m.params;
  table.p = m.p;
  table.resolution = r;
  table.mean = fine.mean;
  table.variance = fine.variance;
  table.closed.assign(fine.raw_conditional_variance.size(), 0.0);
  for (std::size_t u = 1; u < table.closed.size(); ++u)
    table.closed[u] = fine.raw_conditional_variance[u] / fine.variance;
  table.closed.back() = 1.0;

  double gap = std::fabs(fine.mean - coarse.mean) / std::max(1.0, std::fabs(fine.mean));
  if (coarse.variance > 0.0) {
    gap = std::max(gap, std::fabs(fine.variance - coarse.variance) / fine.variance);
    for (std::size_t u = 1; u + 1 < table.closed.size(); ++u)
      gap = std::max(gap, std::fabs(table.closed[u] -
                                    coarse.raw_conditional_variance[u] / coarse.variance));
  }
  table.error_bound = gap;

  table.sobol = sobol_from_closed(table.closed);
  table.total = total_order_indices(table.closed);
  return table;
}

// ---- disk cache --------------------------------------------------------

inline void to_json(nlohmann::json& j, const ReferenceTable& t) {
  j = nlohmann::json{{"model", t.model},     {"params", t.params},
                     {"p", t.p},             {"resolution", t.resolution},
                     {"mean", t.mean},       {"variance", t.variance},
                     {"error_bound", t.error_bound},
                     {"closed", t.closed},   {"sobol", t.sobol},
                     {"total", t.total}};
}

inline void from_json(const nlohmann::json& j, ReferenceTable& t) {
  j.at("model").get_to(t.model);
  j.at("params").get_to(t.params);
  j.at("p").get_to(t.p);
  j.at("resolution").get_to(t.resolution);
  j.at("mean").get_to(t.mean);
  j.at("variance").get_to(t.variance);
  j.at("error_bound").get_to(t.error_bound);
  j.at("closed").get_to(t.closed);
  j.at("sobol").get_to(t.sobol);
  j.at("total").get_to(t.total);
}

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string model_cache_signature(const ModelSpec& m, int resolution) {
  char buf[64];
  std::string sig = m.name + "|p=" + std::to_string(m.p) + "|r=" + std::to_string(resolution);
  for (double c : m.params) {
    std::snprintf(buf, sizeof buf, "|%.17g", c);
    sig += buf;
  }
  for (const InputLaw& law : m.input_laws) {
    std::snprintf(buf, sizeof buf, "|%c:%.17g:%.17g",
                  law.kind == InputLaw::Kind::uniform ? 'u' : 'g', law.a, law.b);
    sig += buf;
  }
  return sig;
}

}  // namespace detail

inline std::string reference_cache_filename(const ModelSpec& m, int resolution) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(
                    detail::fnv1a64(detail::model_cache_signature(m, resolution))));
  return "reference-" + m.name + "-p" + std::to_string(m.p) + "-r" +
         std::to_string(resolution) + "-" + hex + ".json";
}

// SOBOL_MIRROR_CACHE env var overrides; default is ~/.cache/sobol-mirror.
inline std::filesystem::path default_cache_dir() {
  if (const char* env = std::getenv("SOBOL_MIRROR_CACHE"); env && *env)
    return std::filesystem::path(env);
  if (const char* home = std::getenv("HOME"); home && *home)
    return std::filesystem::path(home) / ".cache" / "sobol-mirror";
  return std::filesystem::path(".sobol-mirror-cache");
}

inline std::optional<ReferenceTable> load_reference_table(const std::filesystem::path& dir,
                                                          const ModelSpec& m, int resolution) {
  const std::filesystem::path file = dir / reference_cache_filename(m, resolution);
  std::ifstream in(file);
  if (!in) return std::nullopt;
  try {
    nlohmann::json j;
    in >> j;
    ReferenceTable t = j.get<ReferenceTable>();
    if (t.model != m.name || t.p != m.p || t.resolution != resolution) return std::nullopt;
    if (t.closed.size() != (std::size_t{1} << m.p)) return std::nullopt;
    return t;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;  // corrupted cache entries are recomputed
  }
}

inline void save_reference_table(const std::filesystem::path& dir, const ModelSpec& m,
                                 const ReferenceTable& t) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) return;  // cache is best effort
  const std::filesystem::path file = dir / reference_cache_filename(m, t.resolution);
  std::ofstream out(file);
  if (!out) return;
  nlohmann::json j = t;
  out << j.dump(2) << '\n';
}

inline ReferenceTable reference_with_cache(const ModelSpec& m, int resolution = 0,
                                           const std::filesystem::path& dir = {}) {
  validate_model(m);
  if (m.is_external())
    throw MissingOracleError("reference_with_cache: external models have no quadrature oracle");
  const int r = resolution == 0 ? oracle_auto_resolution(m) : resolution;
  const std::filesystem::path cache = dir.empty() ? default_cache_dir() : dir;
  if (auto hit = load_reference_table(cache, m, r)) return *hit;
  ReferenceTable t = closed_indices_reference(m, r);
  save_reference_table(cache, m, t);
  return t;
}

}  // namespace sobolmd

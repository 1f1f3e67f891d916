#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sobolmd/mirror.hpp"
#include "sobolmd/models.hpp"
#include "sobolmd/rng.hpp"
#include "sobolmd/simplex.hpp"
#include "sobolmd/subset_algebra.hpp"

namespace sobolmd {

struct ValidationResult {
  std::string suite;
  bool pass = false;
  std::string detail;
};

namespace validation {

inline IndexVector random_simplex_point(Rng& rng, std::size_t q, bool zero_empty) {
  IndexVector v(q);
  double total = 0.0;
  for (std::size_t u = 0; u < q; ++u) {
    if (zero_empty && u == 0) continue;
    v[u] = -std::log(rng.uniform01() + 1e-300);
    total += v[u];
  }
  for (double& x : v) x /= total;
  return v;
}

inline ValidationResult inversion_suite(int p, std::uint64_t seed) {
  ValidationResult res{"inversion", true, ""};
  Rng rng(derive_seed(seed, 0x11));
  const std::size_t q = std::size_t{1} << p;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    IndexVector x(q);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    IndexVector a = mobius_transform(zeta_transform(x));
    IndexVector b = zeta_transform(mobius_transform(x));
    for (std::size_t u = 0; u < q; ++u)
      worst = std::max({worst, std::abs(a[u] - x[u]), std::abs(b[u] - x[u])});
  }
  res.pass = worst < 1e-10;
  std::ostringstream os;
  os << "round-trip max deviation " << worst << " over 50 random vectors, p=" << p;
  res.detail = os.str();
  return res;
}

inline ValidationResult spectrum_suite(int p) {
  ValidationResult res{"spectrum", true, ""};
  p = std::min(p, 6);
  const Eigen::MatrixXd m = dense_mobius_matrix(p);
  const Eigen::MatrixXd v = m * m.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(v);
  const std::vector<double> predicted = vp_spectrum(p);
  double worst = 0.0;
  double logprod = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double got = solver.eigenvalues()[static_cast<Eigen::Index>(i)];
    worst = std::max(worst, std::abs(got - predicted[i]) / predicted[i]);
    logprod += std::log(predicted[i]);
  }
  res.pass = worst < 1e-9 && std::abs(logprod) < 1e-9;
  std::ostringstream os;
  os << "eigenvalue max relative deviation " << worst << ", |log det| " << std::abs(logprod)
     << ", p=" << p;
  res.detail = os.str();
  return res;
}

inline ValidationResult bregman_suite(std::uint64_t seed) {
  ValidationResult res{"bregman", true, ""};
  Rng rng(derive_seed(seed, 0x22));
  const std::size_t q = 8;
  double worst_identity = 0.0;
  double worst_bound = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const IndexVector x = random_simplex_point(rng, q, false);
    const IndexVector y = random_simplex_point(rng, q, false);
    const IndexVector z = random_simplex_point(rng, q, false);
    // D(x,z) = D(x,y) + D(y,z) - <grad h(z) - grad h(y), x - y>
    double inner = 0.0;
    for (std::size_t u = 0; u < q; ++u)
      inner += (std::log(z[u]) - std::log(y[u])) * (x[u] - y[u]);
    const double lhs = bregman_divergence(x, z);
    const double rhs = bregman_divergence(x, y) + bregman_divergence(y, z) - inner;
    worst_identity = std::max(worst_identity, std::abs(lhs - rhs));
    double sq = 0.0;
    for (std::size_t u = 0; u < q; ++u) sq += (x[u] - y[u]) * (x[u] - y[u]);
    worst_bound = std::max(worst_bound, sq / 2.0 - bregman_divergence(x, y));
  }
  res.pass = worst_identity < 1e-10 && worst_bound < 1e-12;
  std::ostringstream os;
  os << "three-point identity residual " << worst_identity
     << ", strong convexity slack " << worst_bound << " over 10000 triples";
  res.detail = os.str();
  return res;
}

inline ValidationResult simplex_suite(int p, std::uint64_t seed) {
  ValidationResult res{"simplex", true, ""};
  Rng rng(derive_seed(seed, 0x33));
  const SubsetUniverse uni(p);
  const std::size_t q = uni.q;
  double worst = 0.0;
  bool zeros_ok = true;
  for (int trial = 0; trial < 2000; ++trial) {
    IndexVector s = trial % 2 == 0 ? random_simplex_point(rng, q, true)
                                   : uniform_init(uni);
    if (trial % 5 == 0 && q > 2) {
      // pin one more coordinate to zero, mass folded into another
      const std::size_t kill = 1 + static_cast<std::size_t>(rng.uniform01() * (q - 2));
      s[q - 1] += s[kill];
      s[kill] = 0.0;
    }
    IndexVector g(q);
    const double scale = trial % 3 == 0 ? 1e5 : 1.0;
    for (double& v : g) v = rng.uniform(-scale, scale);
    const IndexVector out = mirror_step(s, g, 0.1);
    double total = 0.0;
    for (std::size_t u = 0; u < q; ++u) {
      total += out[u];
      if (out[u] < 0.0) zeros_ok = false;
      if (s[u] == 0.0 && out[u] != 0.0) zeros_ok = false;
    }
    worst = std::max(worst, std::abs(total - 1.0));
  }
  res.pass = zeros_ok && worst < 1e-9;
  std::ostringstream os;
  os << "mass drift " << worst << " over 2000 steps, support preserved: "
     << (zeros_ok ? "yes" : "no");
  res.detail = os.str();
  return res;
}

// Monte Carlo check that the single-pair gradient estimator has expectation
// H (s - S*) when the centering constant is the exact model mean.
inline ValidationResult unbiasedness_suite(std::uint64_t seed) {
  ValidationResult res{"unbiasedness", true, ""};
  const ModelSpec model = make_builtin_model("linear", 3, {1.0, 2.0, 3.0});
  BuiltinEvaluator f(model);
  const SubsetUniverse uni(model.p);
  const std::size_t q = uni.q;
  const double var_y = 14.0;

  IndexVector sobol_true(q, 0.0);
  sobol_true[1] = 1.0 / 14.0;
  sobol_true[2] = 4.0 / 14.0;
  sobol_true[4] = 9.0 / 14.0;

  Rng law_rng(derive_seed(seed, 0x44));
  IndexVector s = validation::random_simplex_point(law_rng, q, true);
  const IndexVector a(q, 1.0 / static_cast<double>(q));
  const HessianReference hess = hessian_reference(a, var_y);

  IndexVector expected(q, 0.0);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < q; ++j)
      expected[i] += hess.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
                     (s[j] - sobol_true[j]);

  PickFreezeSampler sampler(model, f);
  Rng pair_rng(derive_seed(seed, 0x45));
  Rng subset_rng(derive_seed(seed, 0x46));
  const std::uint64_t n = 200000;
  IndexVector sum(q, 0.0), sumsq(q, 0.0), g(q);
  for (std::uint64_t k = 0; k < n; ++k) {
    // q divides 2^64, so the modulus is exactly the uniform law a
    const auto u = static_cast<SubsetId>(subset_rng.next_u64() % q);
    const PickFreezeTriple t = sampler.draw(pair_rng, u);
    gradient_estimate_inplace(s, 0.0, t, g);
    for (std::size_t v = 0; v < q; ++v) {
      sum[v] += g[v];
      sumsq[v] += g[v] * g[v];
    }
  }
  double worst_sigma = 0.0;
  for (std::size_t v = 0; v < q; ++v) {
    const double mean = sum[v] / static_cast<double>(n);
    const double var = std::max(sumsq[v] / static_cast<double>(n) - mean * mean, 0.0);
    const double se = std::sqrt(var / static_cast<double>(n)) + 1e-12;
    worst_sigma = std::max(worst_sigma, std::abs(mean - expected[v]) / se);
  }
  res.pass = worst_sigma < 4.0;
  std::ostringstream os;
  os << "max |empirical - predicted| = " << worst_sigma << " standard errors over " << n
     << " pairs (threshold 4)";
  res.detail = os.str();
  return res;
}

inline ValidationResult hessian_suite(int p, std::uint64_t seed) {
  ValidationResult res{"hessian", true, ""};
  p = std::min(p, 4);
  const std::size_t q = std::size_t{1} << p;
  const double var_y = 2.5;

  const IndexVector a_uniform(q, 1.0 / static_cast<double>(q));
  const HessianReference uniform_ref = hessian_reference(a_uniform, var_y);
  const Eigen::MatrixXd v = dense_mobius_matrix(p) * dense_mobius_matrix(p).transpose();
  const Eigen::MatrixXd predicted =
      var_y * std::pow(2.0, -p) * v.inverse();
  const double dev = (uniform_ref.matrix - predicted).cwiseAbs().maxCoeff();

  Rng rng(derive_seed(seed, 0x55));
  IndexVector a(q);
  double total = 0.0;
  for (double& x : a) total += (x = rng.uniform(0.1, 1.0));
  for (double& x : a) x /= total;
  const HessianReference ref = hessian_reference(a, var_y);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(ref.matrix);
  const double lambda_min = solver.eigenvalues().minCoeff();
  const bool floor_ok = lambda_min >= ref.eigenvalue_floor - 1e-12;

  res.pass = dev < 1e-9 && floor_ok;
  std::ostringstream os;
  os << "uniform-law closed form deviation " << dev << ", min eigenvalue " << lambda_min
     << " vs floor " << ref.eigenvalue_floor << ", p=" << p;
  res.detail = os.str();
  return res;
}

}  // namespace validation

inline std::vector<ValidationResult> run_validation(const std::string& suite, int p,
                                                    std::uint64_t seed) {
  if (p < 1) p = 3;
  std::vector<ValidationResult> out;
  const bool all = suite.empty() || suite == "all";
  if (all || suite == "inversion") out.push_back(validation::inversion_suite(p, seed));
  if (all || suite == "spectrum") out.push_back(validation::spectrum_suite(p));
  if (all || suite == "bregman") out.push_back(validation::bregman_suite(seed));
  if (all || suite == "simplex") out.push_back(validation::simplex_suite(p, seed));
  if (all || suite == "unbiasedness") out.push_back(validation::unbiasedness_suite(seed));
  if (all || suite == "hessian") out.push_back(validation::hessian_suite(p, seed));
  if (out.empty())
    throw std::invalid_argument(
        "unknown validation suite '" + suite +
        "' (expected all, inversion, spectrum, bregman, simplex, unbiasedness or hessian)");
  return out;
}

}  // namespace sobolmd

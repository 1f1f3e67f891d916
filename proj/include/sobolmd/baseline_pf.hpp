#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sobolmd/errors.hpp"
#include "sobolmd/models.hpp"
#include "sobolmd/numerics.hpp"
#include "sobolmd/rng.hpp"
#include "sobolmd/subset_algebra.hpp"

namespace sobolmd {

// Classical asymptotically efficient Pick-Freeze estimate over N (Y, Y^u)
// pairs, with the pooled mean and pooled second moment of the 2N outputs:
//   T = [mean(Y Y^u) - mean(Z)^2] / [mean((Y^2 + (Y^u)^2)/2) - mean(Z)^2],
// where Z_i = (Y_i + Y_i^u)/2. The pooled second moment in the denominator
// is what makes T consistent for the closed index; squaring Z_i instead
// would shrink the denominator toward (Var + Cov)/2 and bias T upward.
// Deliberately unclipped and unprojected; values outside [0,1] are honest
// sampling noise.
inline double pf1_estimate(std::span<const double> y, std::span<const double> y_u) {
  const std::size_t n = y.size();
  if (y_u.size() != n)
    throw std::invalid_argument("pf1_estimate: sample lengths differ");
  if (n < 2)
    throw std::invalid_argument("pf1_estimate: need at least two pairs");
  std::vector<double> yy(n), z(n), pooled2(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(y_u[i]))
      throw std::invalid_argument("pf1_estimate: samples must be finite");
    yy[i] = y[i] * y_u[i];
    z[i] = 0.5 * (y[i] + y_u[i]);
    pooled2[i] = 0.5 * (y[i] * y[i] + y_u[i] * y_u[i]);
  }
  const double m_yy = mean_of(yy);
  const double m_z = mean_of(z);
  const double m_p2 = mean_of(pooled2);
  const double den = m_p2 - m_z * m_z;
  const double scale = std::max(m_p2 + m_z * m_z, 1e-300);
  if (!(den > 1e-13 * scale))
    throw DegenerateSampleError("pf1_estimate: pooled sample variance is zero up to round-off");
  return (m_yy - m_z * m_z) / den;
}

struct Pf1Result {
  IndexVector closed;     // T_{u,N} per nonempty subset, 0 for the empty set
  IndexVector sobol_raw;  // alternating subset sums of closed, unprojected
  std::uint64_t pairs_per_subset = 0;
  std::uint64_t evals = 0;  // 2 N (2^p - 1): independent designs, no sharing
};

// Full-lattice sweep: an independent Pick-Freeze design of n_pairs pairs per
// nonempty subset, subsets in ascending mask order on a single rng stream.
inline Pf1Result pf1_all(const ModelSpec& model, Evaluator& f, std::uint64_t n_pairs,
                         std::uint64_t seed) {
  if (n_pairs < 2)
    throw std::invalid_argument("pf1_all: need at least two pairs per subset");
  const SubsetUniverse uni(model.p);
  PickFreezeSampler sampler(model, f);
  Rng rng(seed);
  Pf1Result res;
  res.closed.assign(uni.q, 0.0);
  res.pairs_per_subset = n_pairs;
  std::vector<double> y(n_pairs), y_u(n_pairs);
  for (SubsetId u = 1; u < uni.q; ++u) {
    for (std::uint64_t i = 0; i < n_pairs; ++i) {
      const PickFreezeTriple t = sampler.draw(rng, u);
      y[i] = t.y;
      y_u[i] = t.y_u;
    }
    res.closed[u] = pf1_estimate(y, y_u);
    res.evals += 2 * n_pairs;
  }
  res.sobol_raw = mobius_transform(res.closed);
  return res;
}

}  // namespace sobolmd

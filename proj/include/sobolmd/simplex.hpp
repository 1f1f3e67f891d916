#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "sobolmd/errors.hpp"
#include "sobolmd/numerics.hpp"
#include "sobolmd/subset_algebra.hpp"

namespace sobolmd {

// Membership tolerance for probability vectors. States are renormalized
// after every update, so drift never accumulates past this.
inline constexpr double simplex_tolerance = 1e-12;

inline bool is_on_simplex(const IndexVector& v, double tol = simplex_tolerance) {
  for (double x : v)
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
  return std::fabs(compensated_sum(v) - 1.0) <= tol;
}

inline void validate_simplex(const IndexVector& v, const char* where,
                             double tol = simplex_tolerance) {
  for (double x : v)
    if (!(x >= 0.0) || !std::isfinite(x))
      throw std::domain_error(std::string(where) + ": coordinates must be finite and nonnegative");
  if (std::fabs(compensated_sum(v) - 1.0) > tol)
    throw std::domain_error(std::string(where) + ": coordinates must sum to 1");
}

// Divides by the compensated total. Errors out rather than producing a
// vector of infs when the total is zero or not finite.
inline void renormalize(IndexVector& v) {
  const double total = compensated_sum(v);
  if (!(total > 0.0) || !std::isfinite(total))
    throw NumericalError("renormalize: total is not a positive finite number");
  for (double& x : v) x /= total;
}

// Negative entropy sum_i v_i log v_i with the convention 0 log 0 = 0.
// Ranges over [-log(len-1), 0] on probability vectors with a pinned zero.
inline double entropy(const IndexVector& v) {
  double acc = 0.0;
  for (double x : v) {
    if (std::isnan(x) || x < 0.0)
      throw std::domain_error("entropy: negative coordinate");
    if (x > 0.0) acc += x * std::log(x);
  }
  return acc;
}

// Bregman divergence of the negative entropy restricted to the simplex,
// i.e. the Kullback-Leibler divergence sum_i w_i log(w_i / v_i), with
// 0 log(0/v) = 0 and +inf when w puts mass where v has none.
inline double bregman_divergence(const IndexVector& w, const IndexVector& v) {
  if (w.size() != v.size())
    throw std::invalid_argument("bregman_divergence: length mismatch");
  validate_simplex(w, "bregman_divergence");
  validate_simplex(v, "bregman_divergence");
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    if (v[i] == 0.0) return std::numeric_limits<double>::infinity();
    acc += w[i] * std::log(w[i] / v[i]);
  }
  return acc;
}

// Entropic mirror descent step: s'_v proportional to s_v exp(-eta g_v),
// renormalized. Zero coordinates are fixed points of the multiplicative
// update. Exponents are shifted by their minimum over the support before
// exponentiating, so arbitrarily large eta*g cannot overflow; the shift
// cancels in the normalization.
inline void mirror_step_inplace(IndexVector& s, const IndexVector& g, double eta) {
  if (g.size() != s.size())
    throw std::invalid_argument("mirror_step: length mismatch");
  if (!(eta >= 0.0) || !std::isfinite(eta))
    throw std::invalid_argument("mirror_step: eta must be finite and nonnegative");
  validate_simplex(s, "mirror_step");
  double shift = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(g[i]))
      throw std::invalid_argument("mirror_step: gradient coordinates must be finite");
    if (s[i] > 0.0) shift = std::min(shift, eta * g[i]);
  }
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] > 0.0) s[i] *= std::exp(-(eta * g[i] - shift));
  const double total = compensated_sum(s);
  if (!(total > 0.0) || !std::isfinite(total))
    throw NumericalError("mirror_step: update annihilated the iterate");
  for (double& x : s) x /= total;
}

inline IndexVector mirror_step(IndexVector s, const IndexVector& g, double eta) {
  mirror_step_inplace(s, g, eta);
  return s;
}

// Starting iterate: mass 1/(q-1) on every nonempty subset, 0 on the empty
// set (its index is 0 by definition and the multiplicative update keeps it
// there).
inline IndexVector uniform_init(const SubsetUniverse& uni) {
  IndexVector s(uni.q, 1.0 / static_cast<double>(uni.q - 1));
  s[0] = 0.0;
  return s;
}

}  // namespace sobolmd

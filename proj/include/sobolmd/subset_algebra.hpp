#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sobolmd/errors.hpp"

namespace sobolmd {

// A subset u of the variable set {1,...,p} is encoded as a bitmask: bit
// (i-1) is set iff variable i belongs to u. Mask 0 is the empty set. Masks
// double as indices into length-2^p coefficient vectors, so the canonical
// enumeration order is ascending mask value.
using SubsetId = std::uint32_t;

// Coefficient vector indexed by subset mask, length 2^p.
using IndexVector = std::vector<double>;

struct SubsetUniverse {
  static constexpr int max_p = 24;        // index vectors
  static constexpr int max_dense_p = 12;  // dense 2^p x 2^p matrices
  static constexpr int max_spectrum_p = 20;

  int p = 0;
  std::uint32_t q = 0;  // 2^p

  explicit SubsetUniverse(int p_arg) : p(p_arg) {
    if (p < 1)
      throw std::invalid_argument("SubsetUniverse: p must be at least 1");
    if (p > max_p)
      throw CapacityError("SubsetUniverse: p exceeds the cap of " + std::to_string(max_p));
    q = std::uint32_t{1} << p;
  }

  bool contains(SubsetId u) const { return u < q; }
  SubsetId full() const { return q - 1; }

  SubsetId complement(SubsetId u) const {
    require(u, "complement");
    return full() & ~u;
  }

  void require(SubsetId u, const char* where) const {
    if (!contains(u))
      throw std::invalid_argument(std::string(where) + ": subset mask out of range");
  }
};

inline int cardinality(const SubsetUniverse& uni, SubsetId u) {
  uni.require(u, "cardinality");
  return std::popcount(u);
}

// All subsets of u, ascending mask order, 2^|u| entries.
inline std::vector<SubsetId> subsets_of(const SubsetUniverse& uni, SubsetId u) {
  uni.require(u, "subsets_of");
  std::vector<SubsetId> subs;
  subs.reserve(std::size_t{1} << std::popcount(u));
  for (SubsetId sub = u;; sub = (sub - 1) & u) {
    subs.push_back(sub);
    if (sub == 0) break;
  }
  std::reverse(subs.begin(), subs.end());
  return subs;
}

// "{1,3}" style, "{}" for the empty set. Variables are 1-based.
inline std::string format_subset(SubsetId u) {
  std::string out = "{";
  bool first = true;
  for (int i = 0; i < 32; ++i) {
    if (u & (SubsetId{1} << i)) {
      if (!first) out += ',';
      out += std::to_string(i + 1);
      first = false;
    }
  }
  out += '}';
  return out;
}

namespace detail {

// Recovers p from a mask-indexed vector length; rejects anything that is not
// a power of two within the cap.
inline int infer_p(std::size_t n) {
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("subset-indexed vector length must be a power of two");
  if (n > (std::size_t{1} << SubsetUniverse::max_p))
    throw CapacityError("subset-indexed vector longer than 2^" + std::to_string(SubsetUniverse::max_p));
  return std::countr_zero(static_cast<std::uint64_t>(n));
}

}  // namespace detail

// In-place subset sums: x[u] <- sum over v ⊆ u of x[v]. One sweep per bit,
// O(p 2^p). This is the inverse of mobius_transform_inplace.
inline void zeta_transform_inplace(IndexVector& x) {
  const int p = detail::infer_p(x.size());
  for (int d = 0; d < p; ++d) {
    const std::size_t bit = std::size_t{1} << d;
    for (std::size_t u = 0; u < x.size(); ++u)
      if (u & bit) x[u] += x[u ^ bit];
  }
}

// In-place alternating subset sums: x[u] <- sum over v ⊆ u of
// (-1)^(|u|-|v|) x[v]. Same sweep as the zeta transform with subtraction.
inline void mobius_transform_inplace(IndexVector& x) {
  const int p = detail::infer_p(x.size());
  for (int d = 0; d < p; ++d) {
    const std::size_t bit = std::size_t{1} << d;
    for (std::size_t u = 0; u < x.size(); ++u)
      if (u & bit) x[u] -= x[u ^ bit];
  }
}

inline IndexVector zeta_transform(IndexVector x) {
  zeta_transform_inplace(x);
  return x;
}

inline IndexVector mobius_transform(IndexVector x) {
  mobius_transform_inplace(x);
  return x;
}

// Single closed coordinate: sum of s over the subsets of u, O(2^|u|).
inline double closed_coordinate(const IndexVector& s, SubsetId u) {
  detail::infer_p(s.size());
  if (u >= s.size())
    throw std::invalid_argument("closed_coordinate: subset mask out of range");
  double acc = 0.0;
  for (SubsetId sub = u;; sub = (sub - 1) & u) {
    acc += s[sub];
    if (sub == 0) break;
  }
  return acc;
}

// total_i = 1 - closed index of the complement of {i}.
inline std::vector<double> total_order_indices(const IndexVector& closed) {
  const int p = detail::infer_p(closed.size());
  const SubsetId full = static_cast<SubsetId>(closed.size() - 1);
  std::vector<double> total(p);
  for (int i = 0; i < p; ++i)
    total[i] = 1.0 - closed[full & ~(SubsetId{1} << i)];
  return total;
}

// Dense interaction-weight matrix: entry (u,v) is (-1)^(|u|-|v|) when v ⊆ u
// and 0 otherwise. Lower triangular in mask order with unit diagonal.
inline Eigen::MatrixXd dense_mobius_matrix(int p) {
  if (p < 0) throw std::invalid_argument("dense_mobius_matrix: p must be nonnegative");
  if (p > SubsetUniverse::max_dense_p)
    throw CapacityError("dense_mobius_matrix: p exceeds the dense cap of " +
                        std::to_string(SubsetUniverse::max_dense_p));
  const std::size_t q = std::size_t{1} << p;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q));
  for (std::size_t u = 0; u < q; ++u) {
    const int cu = std::popcount(u);
    for (SubsetId v = static_cast<SubsetId>(u);; v = (v - 1) & static_cast<SubsetId>(u)) {
      m(static_cast<Eigen::Index>(u), v) = ((cu - std::popcount(v)) % 2 == 0) ? 1.0 : -1.0;
      if (v == 0) break;
    }
  }
  return m;
}

// Its inverse: entry (u,v) is 1 when v ⊆ u, else 0.
inline Eigen::MatrixXd dense_zeta_matrix(int p) {
  if (p < 0) throw std::invalid_argument("dense_zeta_matrix: p must be nonnegative");
  if (p > SubsetUniverse::max_dense_p)
    throw CapacityError("dense_zeta_matrix: p exceeds the dense cap of " +
                        std::to_string(SubsetUniverse::max_dense_p));
  const std::size_t q = std::size_t{1} << p;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q));
  for (std::size_t u = 0; u < q; ++u)
    for (SubsetId v = static_cast<SubsetId>(u);; v = (v - 1) & static_cast<SubsetId>(u)) {
      m(static_cast<Eigen::Index>(u), v) = 1.0;
      if (v == 0) break;
    }
  return m;
}

// Eigenvalues of M M^T sorted ascending, multiplicities included:
// ((3+sqrt5)/2)^k ((3-sqrt5)/2)^(p-k) with multiplicity C(p,k). Their
// product is exactly 1 (det M = 1).
inline std::vector<double> vp_spectrum(int p) {
  if (p < 0) throw std::invalid_argument("vp_spectrum: p must be nonnegative");
  if (p > SubsetUniverse::max_spectrum_p)
    throw CapacityError("vp_spectrum: p exceeds the cap of " +
                        std::to_string(SubsetUniverse::max_spectrum_p));
  const double phi_plus = (3.0 + std::sqrt(5.0)) / 2.0;
  const double phi_minus = (3.0 - std::sqrt(5.0)) / 2.0;
  std::vector<double> eig;
  eig.reserve(std::size_t{1} << p);
  std::uint64_t binom = 1;  // C(p,k), updated incrementally
  for (int k = 0; k <= p; ++k) {
    const double lambda = std::pow(phi_plus, k) * std::pow(phi_minus, p - k);
    eig.insert(eig.end(), binom, lambda);
    if (k < p) binom = binom * static_cast<std::uint64_t>(p - k) / static_cast<std::uint64_t>(k + 1);
  }
  return eig;
}

}  // namespace sobolmd

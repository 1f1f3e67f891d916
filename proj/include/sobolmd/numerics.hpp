#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace sobolmd {

// Neumaier compensated summation. Vectors indexed by subset mask reach 2^24
// entries, where naive accumulation alone would eat the 1e-12 simplex budget.
inline double compensated_sum(std::span<const double> v) {
  double s = 0.0;
  double c = 0.0;
  for (double x : v) {
    const double t = s + x;
    if (std::fabs(s) >= std::fabs(x))
      c += (s - t) + x;
    else
      c += (x - t) + s;
    s = t;
  }
  return s + c;
}

inline double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : compensated_sum(v) / static_cast<double>(v.size());
}

}  // namespace sobolmd

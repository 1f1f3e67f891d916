#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sobolmd {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Seed for one replicate/worker stream. Mixed through splitmix64 so nearby
// stream ids do not hand mt19937_64 correlated states.
inline std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t stream) {
  return splitmix64(master_seed ^ splitmix64(stream));
}

// Deterministic variate source whose byte stream the C++ standard pins down
// exactly, so replays match across platforms and compilers:
//   next_u64:  one mt19937_64 draw
//   uniform01: one draw, top 53 bits, value in [0,1)
//   gaussian:  two draws, Box-Muller cosine branch
// std::normal_distribution is deliberately not used; its algorithm is
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo < hi))
      throw std::invalid_argument("Rng::uniform: need lo < hi");
    return lo + (hi - lo) * uniform01();
  }

  double gaussian(double mu, double sigma) {
    if (!(sigma > 0.0))
      throw std::invalid_argument("Rng::gaussian: need sigma > 0");
    // u1 in (0,1] keeps the log finite
    const double u1 = static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // mt19937_64 stream state in the standard's text form.
  std::string state_string() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void set_state(const std::string& text) {
    std::istringstream is(text);
    is >> gen_;
    if (is.fail())
      throw std::invalid_argument("Rng::set_state: malformed engine state");
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace sobolmd

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sobolmd/errors.hpp"
#include "sobolmd/models.hpp"
#include "sobolmd/numerics.hpp"
#include "sobolmd/rng.hpp"
#include "sobolmd/simplex.hpp"
#include "sobolmd/subset_algebra.hpp"

namespace sobolmd {

// ||a||_{exp,l} = sum_u a_u 2^(l |u|).
inline double weight_exp_norm(const IndexVector& a, double ell) {
  detail::infer_p(a.size());
  if (!(ell >= 0.0) || !std::isfinite(ell))
    throw std::invalid_argument("weight_exp_norm: ell must be finite and nonnegative");
  double acc = 0.0;
  for (std::size_t u = 0; u < a.size(); ++u)
    acc += a[u] * std::exp2(ell * std::popcount(static_cast<SubsetId>(u)));
  return acc;
}

// Step size sequence. power: the m-th step (m >= 1) is eta0 * m^(-alpha).
// theorem_constant: a flat step 1/sqrt((1 + sqrt(||a||_{exp,2})) * horizon)
// up to the horizon and 0 after, which freezes the iterate while the mean
// keeps updating.
struct StepSchedule {
  enum class Kind { power, theorem_constant };

  Kind kind = Kind::power;
  double eta0 = 0.3;
  double alpha = 0.5;
  std::uint64_t horizon = 0;  // theorem_constant only
  double constant = 0.0;      // theorem_constant step value

  double step(std::uint64_t m) const {
    if (kind == Kind::power)
      return eta0 * std::pow(static_cast<double>(m), -alpha);
    return m <= horizon ? constant : 0.0;
  }

  static StepSchedule power(double eta0 = 0.3, double alpha = 0.5) {
    if (!(eta0 > 0.0) || !std::isfinite(eta0))
      throw std::invalid_argument("StepSchedule: eta0 must be positive and finite");
    if (!(alpha >= 0.5) || !(alpha <= 1.0))
      throw std::invalid_argument("StepSchedule: alpha must lie in [1/2, 1]");
    StepSchedule s;
    s.kind = Kind::power;
    s.eta0 = eta0;
    s.alpha = alpha;
    return s;
  }

  static StepSchedule theorem_constant(const IndexVector& a, std::uint64_t horizon) {
    if (horizon == 0)
      throw std::invalid_argument("StepSchedule: theorem_constant needs a positive horizon");
    StepSchedule s;
    s.kind = Kind::theorem_constant;
    s.horizon = horizon;
    s.constant = 1.0 / std::sqrt((1.0 + std::sqrt(weight_exp_norm(a, 2.0))) *
                                 static_cast<double>(horizon));
    s.eta0 = s.constant;
    s.alpha = 0.0;
    return s;
  }
};

// Law over the subset drawn each iteration. fixed uses a static base law;
// the adaptive kinds follow the current iterate (proportional_s) or its
// reciprocal (inverse_s), floored so no coordinate's weight collapses to 0.
struct SamplingStrategy {
  enum class Kind { fixed, proportional_s, inverse_s };

  Kind kind = Kind::fixed;
  IndexVector base;     // fixed law
  double floor = 1e-6;  // adaptive kinds
  bool exclude_empty = false;

  static SamplingStrategy uniform_all(const SubsetUniverse& uni, bool exclude_empty = false) {
    SamplingStrategy s;
    s.kind = Kind::fixed;
    s.exclude_empty = exclude_empty;
    if (exclude_empty) {
      s.base.assign(uni.q, 1.0 / static_cast<double>(uni.q - 1));
      s.base[0] = 0.0;
    } else {
      s.base.assign(uni.q, 1.0 / static_cast<double>(uni.q));
    }
    return s;
  }

  static SamplingStrategy fixed_law(IndexVector base) {
    detail::infer_p(base.size());
    double total = 0.0;
    for (double w : base) {
      if (!(w >= 0.0) || !std::isfinite(w))
        throw std::invalid_argument("SamplingStrategy: weights must be finite and nonnegative");
      total += w;
    }
    if (!(total > 0.0))
      throw std::invalid_argument("SamplingStrategy: weights must not all vanish");
    for (double& w : base) w /= total;
    SamplingStrategy s;
    s.kind = Kind::fixed;
    s.base = std::move(base);
    return s;
  }

  static SamplingStrategy proportional(double floor = 1e-6, bool exclude_empty = false) {
    if (!(floor > 0.0))
      throw std::invalid_argument("SamplingStrategy: floor must be positive");
    SamplingStrategy s;
    s.kind = Kind::proportional_s;
    s.floor = floor;
    s.exclude_empty = exclude_empty;
    return s;
  }

  static SamplingStrategy inverse(double floor = 1e-6, bool exclude_empty = false) {
    if (!(floor > 0.0))
      throw std::invalid_argument("SamplingStrategy: floor must be positive");
    SamplingStrategy s;
    s.kind = Kind::inverse_s;
    s.floor = floor;
    s.exclude_empty = exclude_empty;
    return s;
  }
};

// Law for the next subset draw given the current iterate.
inline void resolve_weights(const SamplingStrategy& st, const IndexVector& s_hat,
                            IndexVector& out) {
  detail::infer_p(s_hat.size());
  switch (st.kind) {
    case SamplingStrategy::Kind::fixed:
      if (st.base.size() != s_hat.size())
        throw std::invalid_argument("resolve_weights: base law length mismatch");
      out = st.base;
      return;  // fixed laws are already normalized
    case SamplingStrategy::Kind::proportional_s:
      out.resize(s_hat.size());
      for (std::size_t u = 0; u < s_hat.size(); ++u)
        out[u] = std::max(s_hat[u], st.floor);
      break;
    case SamplingStrategy::Kind::inverse_s:
      out.resize(s_hat.size());
      for (std::size_t u = 0; u < s_hat.size(); ++u)
        out[u] = 1.0 / std::max(s_hat[u], st.floor);
      break;
  }
  if (st.exclude_empty) out[0] = 0.0;
  renormalize(out);
}

inline IndexVector resolve_weights(const SamplingStrategy& st, const IndexVector& s_hat) {
  IndexVector out;
  resolve_weights(st, s_hat, out);
  return out;
}

struct EstimatorState {
  std::uint64_t n = 0;
  double m_hat = 0.0;
  IndexVector s_hat;
  IndexVector cesaro_num;  // sum of eta_{k+1} * s_hat_k, from k = 0
  double cesaro_den = 0.0;
  std::uint64_t evals = 0;
};

inline EstimatorState make_initial_state(const SubsetUniverse& uni) {
  EstimatorState st;
  st.s_hat = uniform_init(uni);
  st.cesaro_num.assign(uni.q, 0.0);
  return st;
}

// One-sample gradient of the sampled quadratic risk at s_hat:
//   c = (y - m)((y - m) * closed(s_hat)_U - (y_u - m)),  g_v = c for v ⊆ U.
// m must be the running mean BEFORE this sample's y is folded in. The
// gradient touches exactly the 2^|U| coordinates below U.
inline void gradient_estimate_inplace(const IndexVector& s_hat, double m_hat,
                                      const PickFreezeTriple& t, IndexVector& g) {
  if (!std::isfinite(t.y) || !std::isfinite(t.y_u) || !std::isfinite(m_hat))
    throw std::invalid_argument("gradient_estimate: inputs must be finite");
  const double closed_u = closed_coordinate(s_hat, t.u);  // range-checks t.u
  const double yc = t.y - m_hat;
  const double c = yc * (yc * closed_u - (t.y_u - m_hat));
  g.assign(s_hat.size(), 0.0);
  for (SubsetId sub = t.u;; sub = (sub - 1) & t.u) {
    g[sub] = c;
    if (sub == 0) break;
  }
}

inline IndexVector gradient_estimate(const IndexVector& s_hat, double m_hat,
                                     const PickFreezeTriple& t) {
  IndexVector g;
  gradient_estimate_inplace(s_hat, m_hat, t, g);
  return g;
}

// Online estimator of the full interaction-index vector. Per iteration, in
// this order: weights from the current iterate, subset draw (inverse CDF via
// one uniform), Pick-Freeze pair draw, gradient at the pre-update mean,
// Cesaro accumulation of the pre-step iterate with eta_{n+1}, mean update
// from Y alone, mirror step.
class MirrorEstimator {
 public:
  MirrorEstimator(const ModelSpec& model, Evaluator& f, SamplingStrategy strategy,
                  StepSchedule schedule, std::uint64_t seed)
      : uni_(model.p),
        sampler_(model, f),
        strategy_(std::move(strategy)),
        schedule_(schedule),
        rng_(seed),
        st_(make_initial_state(uni_)),
        weights_(uni_.q, 0.0),
        grad_(uni_.q, 0.0) {
    if (strategy_.kind == SamplingStrategy::Kind::fixed &&
        strategy_.base.size() != uni_.q)
      throw std::invalid_argument("MirrorEstimator: sampling law length mismatch");
  }

  void advance() {
    resolve_weights(strategy_, st_.s_hat, weights_);
    const SubsetId u = sample_subset();
    const PickFreezeTriple t = sampler_.draw(rng_, u);
    const double eta = schedule_.step(st_.n + 1);
    gradient_estimate_inplace(st_.s_hat, st_.m_hat, t, grad_);
    for (std::size_t i = 0; i < st_.s_hat.size(); ++i)
      st_.cesaro_num[i] += eta * st_.s_hat[i];
    st_.cesaro_den += eta;
    st_.m_hat += (t.y - st_.m_hat) / static_cast<double>(st_.n + 1);
    mirror_step_inplace(st_.s_hat, grad_, eta);
    st_.n += 1;
    st_.evals += 2;
  }

  const EstimatorState& state() const { return st_; }
  const SubsetUniverse& universe() const { return uni_; }

  IndexVector cesaro_average() const {
    if (!(st_.cesaro_den > 0.0))
      throw std::domain_error("cesaro_average: no steps accumulated yet");
    IndexVector avg = st_.cesaro_num;
    for (double& v : avg) v /= st_.cesaro_den;
    return avg;
  }

  // Checkpoint of the full resumable state, rng stream included.
  nlohmann::json save_state() const {
    return nlohmann::json{{"n", st_.n},
                          {"m_hat", st_.m_hat},
                          {"s_hat", st_.s_hat},
                          {"cesaro_num", st_.cesaro_num},
                          {"cesaro_den", st_.cesaro_den},
                          {"evals", st_.evals},
                          {"rng_state", rng_.state_string()}};
  }

  void load_state(const nlohmann::json& j) {
    EstimatorState st;
    j.at("n").get_to(st.n);
    j.at("m_hat").get_to(st.m_hat);
    j.at("s_hat").get_to(st.s_hat);
    j.at("cesaro_num").get_to(st.cesaro_num);
    j.at("cesaro_den").get_to(st.cesaro_den);
    j.at("evals").get_to(st.evals);
    if (st.s_hat.size() != uni_.q || st.cesaro_num.size() != uni_.q)
      throw std::invalid_argument("load_state: state length does not match the model dimension");
    validate_simplex(st.s_hat, "load_state");
    rng_.set_state(j.at("rng_state").get<std::string>());
    st_ = std::move(st);
  }

 private:
  SubsetId sample_subset() {
    const double r = rng_.uniform01();
    double acc = 0.0;
    SubsetId last = 0;
    bool seen = false;
    for (std::size_t v = 0; v < weights_.size(); ++v) {
      if (weights_[v] <= 0.0) continue;
      acc += weights_[v];
      last = static_cast<SubsetId>(v);
      seen = true;
      if (r < acc) return last;
    }
    if (!seen) throw NumericalError("sample_subset: empty sampling law");
    return last;  // r fell into the rounding gap at the top of the CDF
  }

  SubsetUniverse uni_;
  PickFreezeSampler sampler_;
  SamplingStrategy strategy_;
  StepSchedule schedule_;
  Rng rng_;
  EstimatorState st_;
  IndexVector weights_, grad_;
};

struct TrajectorySnapshot {
  std::uint64_t n = 0;
  IndexVector s_hat;
  IndexVector cesaro;  // empty when averaging is off
};

struct RunReport {
  EstimatorState final_state;
  IndexVector cesaro;         // empty when averaging is off
  IndexVector closed;         // subset sums of the final iterate
  std::vector<double> total;  // per variable
  std::vector<TrajectorySnapshot> snapshots;
};

// Geometrically spaced snapshot points ending at the horizon.
inline std::vector<std::uint64_t> geometric_checkpoints(std::uint64_t horizon, int count) {
  std::vector<std::uint64_t> pts;
  if (horizon == 0 || count <= 0) return pts;
  for (int k = 0; k < count; ++k) {
    const double frac = static_cast<double>(k + 1) / count;
    const std::uint64_t n = static_cast<std::uint64_t>(
        std::llround(std::pow(static_cast<double>(horizon), frac)));
    pts.push_back(std::max<std::uint64_t>(n, 1));
  }
  pts.back() = horizon;
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

inline RunReport run_mirror(const ModelSpec& model, Evaluator& f,
                            const SamplingStrategy& strategy, const StepSchedule& schedule,
                            std::uint64_t iterations, std::uint64_t seed,
                            bool averaging = false,
                            std::vector<std::uint64_t> checkpoints = {}) {
  if (iterations == 0)
    throw std::invalid_argument("run_mirror: need at least one iteration");
  MirrorEstimator est(model, f, strategy, schedule, seed);
  std::sort(checkpoints.begin(), checkpoints.end());
  checkpoints.erase(std::unique(checkpoints.begin(), checkpoints.end()), checkpoints.end());
  RunReport rep;
  std::size_t next_cp = 0;
  for (std::uint64_t n = 1; n <= iterations; ++n) {
    est.advance();
    if (next_cp < checkpoints.size() && checkpoints[next_cp] == n) {
      TrajectorySnapshot snap;
      snap.n = n;
      snap.s_hat = est.state().s_hat;
      if (averaging) snap.cesaro = est.cesaro_average();
      rep.snapshots.push_back(std::move(snap));
      ++next_cp;
    }
  }
  rep.final_state = est.state();
  if (averaging) rep.cesaro = est.cesaro_average();
  rep.closed = zeta_transform(rep.final_state.s_hat);
  rep.total = total_order_indices(rep.closed);
  return rep;
}

struct HessianReference {
  Eigen::MatrixXd matrix;
  double eigenvalue_floor = 0.0;
};

// Constant Hessian of the sampled risk: H_{ij} = Var(Y) sum_{u ⊇ i∪j} a_u,
// assembled from one superset-sum sweep. Spectral floor
// Var(Y) (min_u a_u) ((3-sqrt5)/2)^p.
inline HessianReference hessian_reference(const IndexVector& a, double var_y) {
  const int p = detail::infer_p(a.size());
  if (p > 10)
    throw CapacityError("hessian_reference: p exceeds the cap of 10");
  if (!(var_y >= 0.0) || !std::isfinite(var_y))
    throw std::invalid_argument("hessian_reference: variance must be finite and nonnegative");
  double min_a = a[0];
  for (double w : a) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw std::invalid_argument("hessian_reference: weights must be finite and nonnegative");
    min_a = std::min(min_a, w);
  }
  IndexVector sup = a;
  for (int d = 0; d < p; ++d) {
    const std::size_t bit = std::size_t{1} << d;
    for (std::size_t u = 0; u < sup.size(); ++u)
      if (!(u & bit)) sup[u] += sup[u | bit];
  }
  const auto q = static_cast<Eigen::Index>(a.size());
  HessianReference h;
  h.matrix.resize(q, q);
  for (Eigen::Index i = 0; i < q; ++i)
    for (Eigen::Index j = 0; j < q; ++j)
      h.matrix(i, j) = var_y * sup[static_cast<std::size_t>(i) | static_cast<std::size_t>(j)];
  h.eigenvalue_floor = var_y * min_a * std::pow((3.0 - std::sqrt(5.0)) / 2.0, p);
  return h;
}

}  // namespace sobolmd

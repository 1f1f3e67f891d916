#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sobolmd/errors.hpp"
#include "sobolmd/rng.hpp"
#include "sobolmd/subset_algebra.hpp"

namespace sobolmd {

struct InputLaw {
  enum class Kind { uniform, gaussian };

  Kind kind = Kind::uniform;
  double a = 0.0;  // uniform: lower bound; gaussian: mean
  double b = 1.0;  // uniform: upper bound; gaussian: standard deviation

  static InputLaw make_uniform(double lo, double hi) {
    if (!(lo < hi))
      throw std::invalid_argument("InputLaw: uniform law needs lo < hi");
    return {Kind::uniform, lo, hi};
  }

  static InputLaw make_gaussian(double mean, double sd) {
    if (!(sd > 0.0))
      throw std::invalid_argument("InputLaw: gaussian law needs sd > 0");
    return {Kind::gaussian, mean, sd};
  }

  double sample(Rng& rng) const {
    return kind == Kind::uniform ? rng.uniform(a, b) : rng.gaussian(a, b);
  }
};

// Description of the function under study plus the product law of its
// inputs. Builtins are named; external models carry the child command line
// and are evaluated through the subprocess protocol.
struct ModelSpec {
  std::string name;  // "bratley" | "disc" | "disc2" | "linear" | "external"
  int p = 0;
  std::vector<InputLaw> input_laws;            // size p
  std::vector<double> params;                  // linear: coefficients
  std::vector<std::string> external_command;   // argv; nonempty iff external

  bool is_external() const { return !external_command.empty(); }
};

inline void validate_model(const ModelSpec& m) {
  if (m.p < 1)
    throw std::invalid_argument("ModelSpec: p must be at least 1");
  if (m.p > SubsetUniverse::max_p)
    throw CapacityError("ModelSpec: p exceeds the cap of " + std::to_string(SubsetUniverse::max_p));
  if (m.input_laws.size() != static_cast<std::size_t>(m.p))
    throw std::invalid_argument("ModelSpec: need one input law per coordinate");
  for (const InputLaw& law : m.input_laws) {
    if (law.kind == InputLaw::Kind::uniform && !(law.a < law.b))
      throw std::invalid_argument("ModelSpec: uniform law needs lo < hi");
    if (law.kind == InputLaw::Kind::gaussian && !(law.b > 0.0))
      throw std::invalid_argument("ModelSpec: gaussian law needs sd > 0");
  }
  if (m.is_external()) return;
  if (m.name == "bratley") return;
  if (m.name == "disc" || m.name == "disc2") {
    if (m.p != 3)
      throw std::invalid_argument("ModelSpec: " + m.name + " is a 3-variable model");
    return;
  }
  if (m.name == "linear") {
    if (m.params.size() != static_cast<std::size_t>(m.p))
      throw std::invalid_argument("ModelSpec: linear model needs one coefficient per coordinate");
    return;
  }
  throw std::invalid_argument("ModelSpec: unknown builtin model '" + m.name + "'");
}

// Builtin factory. p == 0 picks the model's default dimension; laws default
// to U(0,1) for bratley and standard gaussians otherwise. Linear
// coefficients default to all ones.
inline ModelSpec make_builtin_model(const std::string& name, int p = 0,
                                    std::vector<double> params = {}) {
  ModelSpec m;
  m.name = name;
  if (name == "bratley") {
    m.p = p == 0 ? 5 : p;
    if (m.p >= 1) m.input_laws.assign(m.p, InputLaw::make_uniform(0.0, 1.0));
  } else if (name == "disc" || name == "disc2") {
    m.p = p == 0 ? 3 : p;
    if (m.p >= 1) m.input_laws.assign(m.p, InputLaw::make_gaussian(0.0, 1.0));
  } else if (name == "linear") {
    m.p = p == 0 ? static_cast<int>(params.size()) : p;
    if (params.empty() && m.p >= 1) params.assign(m.p, 1.0);
    if (m.p >= 1) m.input_laws.assign(m.p, InputLaw::make_gaussian(0.0, 1.0));
  } else {
    throw std::invalid_argument("make_builtin_model: unknown builtin model '" + name + "'");
  }
  m.params = std::move(params);
  validate_model(m);
  return m;
}

inline ModelSpec make_external_model(std::vector<std::string> command, int p,
                                     std::vector<InputLaw> laws) {
  if (command.empty())
    throw std::invalid_argument("make_external_model: empty command line");
  ModelSpec m;
  m.name = "external";
  m.p = p;
  m.input_laws = std::move(laws);
  m.external_command = std::move(command);
  validate_model(m);
  return m;
}

inline double evaluate_builtin(const ModelSpec& m, std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(m.p))
    throw std::invalid_argument("evaluate_builtin: input arity mismatch");
  if (m.name == "bratley") {
    // sum_{i=1}^p (-1)^i prod_{j<=i} x_j
    double prod = 1.0;
    double acc = 0.0;
    for (int i = 0; i < m.p; ++i) {
      prod *= x[i];
      acc += (i % 2 == 0) ? -prod : prod;
    }
    return acc;
  }
  if (m.name == "disc")
    return (x[2] < 0.0 ? x[0] : x[1] * x[1]) + x[2];
  if (m.name == "disc2") {
    // both indicator terms vanish on the boundary x3 = 0
    if (x[2] > 0.0) return x[0] + x[2];
    if (x[2] < 0.0) return x[1] + x[2];
    return x[2];
  }
  if (m.name == "linear") {
    double acc = 0.0;
    for (int i = 0; i < m.p; ++i) acc += m.params[i] * x[i];
    return acc;
  }
  throw std::invalid_argument("evaluate_builtin: unknown builtin model '" + m.name + "'");
}

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual double evaluate(std::span<const double> x) = 0;
};

class BuiltinEvaluator final : public Evaluator {
 public:
  explicit BuiltinEvaluator(ModelSpec spec) : spec_(std::move(spec)) {
    if (spec_.is_external())
      throw std::invalid_argument("BuiltinEvaluator: external model");
    validate_model(spec_);
  }

  double evaluate(std::span<const double> x) override { return evaluate_builtin(spec_, x); }

 private:
  ModelSpec spec_;
};

inline std::unique_ptr<Evaluator> make_builtin_evaluator(const ModelSpec& spec) {
  return std::make_unique<BuiltinEvaluator>(spec);
}

// x^(u): coordinates in u from x, the rest from xp.
inline void hybridize(std::span<const double> x, std::span<const double> xp,
                      SubsetId u, std::span<double> out) {
  const std::size_t p = x.size();
  if (xp.size() != p || out.size() != p)
    throw std::invalid_argument("hybridize: size mismatch");
  if (p < 32 && u >= (SubsetId{1} << p))
    throw std::invalid_argument("hybridize: subset mask out of range");
  for (std::size_t i = 0; i < p; ++i)
    out[i] = ((u >> i) & 1u) ? x[i] : xp[i];
}

inline std::vector<double> hybridize(const std::vector<double>& x,
                                     const std::vector<double>& xp, SubsetId u) {
  std::vector<double> out(x.size());
  hybridize(std::span<const double>(x), std::span<const double>(xp), u, std::span<double>(out));
  return out;
}

struct PickFreezeTriple {
  SubsetId u = 0;
  double y = 0.0;    // f(X)
  double y_u = 0.0;  // f(X^(u))
};

// Draws (Y, Y^(u)) pairs: two fresh input vectors, exactly two model
// evaluations. Draw discipline, pinned for reproducibility: all coordinates
// of X in index order, then all of X'; f(X) is evaluated before f(X^(u)).
class PickFreezeSampler {
 public:
  PickFreezeSampler(const ModelSpec& spec, Evaluator& f)
      : spec_(spec), f_(f), x_(spec.p), xp_(spec.p), hybrid_(spec.p) {
    validate_model(spec_);
  }

  PickFreezeTriple draw(Rng& rng, SubsetId u) {
    if (spec_.p < 32 && u >= (SubsetId{1} << spec_.p))
      throw std::invalid_argument("PickFreezeSampler: subset mask out of range");
    for (int i = 0; i < spec_.p; ++i) x_[i] = spec_.input_laws[i].sample(rng);
    for (int i = 0; i < spec_.p; ++i) xp_[i] = spec_.input_laws[i].sample(rng);
    const double y = checked(f_.evaluate(x_));
    hybridize(std::span<const double>(x_), std::span<const double>(xp_), u,
              std::span<double>(hybrid_));
    const double y_u = checked(f_.evaluate(hybrid_));
    return {u, y, y_u};
  }

  const ModelSpec& spec() const { return spec_; }

 private:
  static double checked(double y) {
    if (!std::isfinite(y))
      throw EvaluationError("model evaluation produced a non-finite value");
    return y;
  }

  ModelSpec spec_;
  Evaluator& f_;
  std::vector<double> x_, xp_, hybrid_;
};

inline PickFreezeTriple pick_freeze_draw(Rng& rng, const ModelSpec& spec,
                                         Evaluator& f, SubsetId u) {
  PickFreezeSampler sampler(spec, f);
  return sampler.draw(rng, u);
}

}  // namespace sobolmd

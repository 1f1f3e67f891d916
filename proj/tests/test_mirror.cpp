#include <cmath>
#include <span>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "sobolmd/mirror.hpp"
#include "sobolmd/oracle.hpp"

using namespace sobolmd;

namespace {

// Wraps an evaluator and logs every value it returns.
class RecordingEvaluator final : public Evaluator {
 public:
  explicit RecordingEvaluator(Evaluator& inner) : inner_(inner) {}
  double evaluate(std::span<const double> x) override {
    const double y = inner_.evaluate(x);
    log.push_back(y);
    return y;
  }
  std::vector<double> log;

 private:
  Evaluator& inner_;
};

}  // namespace

TEST_CASE("exponential weight norm") {
  const IndexVector a{0.5, 0.5};
  CHECK(weight_exp_norm(a, 0.0) == Catch::Approx(1.0).margin(1e-15));
  CHECK(weight_exp_norm(a, 1.0) == Catch::Approx(1.5).margin(1e-15));
  CHECK(weight_exp_norm(a, 2.0) == Catch::Approx(2.5).margin(1e-15));
  const IndexVector b{0.25, 0.25, 0.25, 0.25};
  CHECK(weight_exp_norm(b, 1.0) == Catch::Approx(0.25 * (1 + 2 + 2 + 4)).margin(1e-15));
  CHECK_THROWS_AS(weight_exp_norm(a, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(weight_exp_norm(IndexVector(3, 0.1), 1.0), std::invalid_argument);
}

TEST_CASE("power step schedule") {
  const StepSchedule s = StepSchedule::power(0.3, 0.5);
  CHECK(s.step(1) == Catch::Approx(0.3).margin(1e-15));
  CHECK(s.step(4) == Catch::Approx(0.15).margin(1e-15));
  CHECK(s.step(9) == Catch::Approx(0.1).margin(1e-15));
  const StepSchedule s1 = StepSchedule::power(0.2, 1.0);
  CHECK(s1.step(10) == Catch::Approx(0.02).margin(1e-15));
  CHECK_THROWS_AS(StepSchedule::power(0.3, 0.4), std::invalid_argument);
  CHECK_THROWS_AS(StepSchedule::power(0.3, 1.1), std::invalid_argument);
  CHECK_THROWS_AS(StepSchedule::power(0.0, 0.5), std::invalid_argument);
}

TEST_CASE("flat theoretical step schedule freezes after the horizon") {
  const IndexVector a{0.5, 0.5};
  const StepSchedule s = StepSchedule::theorem_constant(a, 100);
  const double want = 1.0 / std::sqrt((1.0 + std::sqrt(2.5)) * 100.0);
  CHECK(s.step(1) == Catch::Approx(want).margin(1e-15));
  CHECK(s.step(100) == Catch::Approx(want).margin(1e-15));
  CHECK(s.step(101) == 0.0);
  CHECK_THROWS_AS(StepSchedule::theorem_constant(a, 0), std::invalid_argument);
}

TEST_CASE("sampling strategies resolve to valid laws") {
  SubsetUniverse uni(2);

  const auto unif = SamplingStrategy::uniform_all(uni);
  const IndexVector w0 = resolve_weights(unif, uniform_init(uni));
  for (double w : w0) CHECK(w == Catch::Approx(0.25).margin(1e-15));

  const auto unif_ne = SamplingStrategy::uniform_all(uni, true);
  const IndexVector w1 = resolve_weights(unif_ne, uniform_init(uni));
  CHECK(w1[0] == 0.0);
  for (std::size_t u = 1; u < 4; ++u)
    CHECK(w1[u] == Catch::Approx(1.0 / 3).margin(1e-15));

  const IndexVector s{0.0, 0.5, 0.5, 0.0};
  const IndexVector wp = resolve_weights(SamplingStrategy::proportional(1e-6), s);
  CHECK(wp[1] == Catch::Approx(0.5).epsilon(1e-5));
  CHECK(wp[0] == Catch::Approx(1e-6).epsilon(1e-4));
  CHECK(compensated_sum(wp) == Catch::Approx(1.0).margin(1e-12));

  const IndexVector wi = resolve_weights(SamplingStrategy::inverse(1e-3), s);
  CHECK(wi[0] > wi[1]);  // vanished coordinates get the most attention
  CHECK(wi[0] == Catch::Approx(wi[3]).margin(1e-15));
  CHECK(wi[1] == Catch::Approx(wi[2]).margin(1e-15));
  CHECK(compensated_sum(wi) == Catch::Approx(1.0).margin(1e-12));

  const IndexVector wie =
      resolve_weights(SamplingStrategy::inverse(1e-3, true), s);
  CHECK(wie[0] == 0.0);
  CHECK(compensated_sum(wie) == Catch::Approx(1.0).margin(1e-12));

  const auto fl = SamplingStrategy::fixed_law({1.0, 3.0});
  CHECK(fl.base[0] == 0.25);
  CHECK(fl.base[1] == 0.75);
  CHECK_THROWS_AS(SamplingStrategy::fixed_law({0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(SamplingStrategy::fixed_law({-1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(SamplingStrategy::proportional(0.0), std::invalid_argument);
}

TEST_CASE("gradient estimate on worked examples") {
  SECTION("full mask, p = 1") {
    const IndexVector s{0.0, 1.0};
    const PickFreezeTriple t{1u, 2.0, 1.0};
    const IndexVector g = gradient_estimate(s, 0.0, t);
    // c = y (y * (s0 + s1) - y_u) = 2 (2 - 1) = 2 on both coordinates
    CHECK(g[0] == Catch::Approx(2.0).margin(1e-15));
    CHECK(g[1] == Catch::Approx(2.0).margin(1e-15));
  }
  SECTION("empty mask touches only the empty coordinate") {
    const IndexVector s{0.0, 1.0};
    const PickFreezeTriple t{0u, 2.0, 1.0};
    const IndexVector g = gradient_estimate(s, 0.0, t);
    // closed coordinate of {} is s_0 = 0, so c = -y y_u
    CHECK(g[0] == Catch::Approx(-2.0).margin(1e-15));
    CHECK(g[1] == 0.0);
  }
  SECTION("centering by the running mean") {
    const IndexVector s{0.0, 1.0};
    const PickFreezeTriple t{1u, 2.0, 1.0};
    const IndexVector g = gradient_estimate(s, 0.5, t);
    // c = (y-m)((y-m)(s0+s1) - (y_u-m)) = 1.5 (1.5 - 0.5)
    CHECK(g[1] == Catch::Approx(1.5).margin(1e-15));
  }
  SECTION("support is exactly the 2^|U| submasks") {
    SubsetUniverse uni(4);
    IndexVector s = uniform_init(uni);
    const PickFreezeTriple t{0b0101u, 1.5, 0.25};
    const IndexVector g = gradient_estimate(s, 0.0, t);
    for (SubsetId v = 0; v < uni.q; ++v) {
      if ((v & 0b0101u) == v)
        CHECK(g[v] == g[0b0101u]);
      else
        CHECK(g[v] == 0.0);
    }
  }
  SECTION("validation") {
    const IndexVector s{0.0, 1.0};
    CHECK_THROWS_AS(gradient_estimate(s, std::nan(""), {1u, 1.0, 1.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(gradient_estimate(s, 0.0, {2u, 1.0, 1.0}), std::invalid_argument);
  }
}

TEST_CASE("estimator runs are deterministic in the seed") {
  const ModelSpec model = make_builtin_model("disc2");
  BuiltinEvaluator f(model);
  const SubsetUniverse uni(model.p);
  const auto strategy = SamplingStrategy::uniform_all(uni);
  const auto schedule = StepSchedule::power();

  MirrorEstimator a(model, f, strategy, schedule, 991);
  MirrorEstimator b(model, f, strategy, schedule, 991);
  MirrorEstimator c(model, f, strategy, schedule, 992);
  for (int i = 0; i < 200; ++i) {
    a.advance();
    b.advance();
    c.advance();
  }
  CHECK(a.state().s_hat == b.state().s_hat);
  CHECK(a.state().m_hat == b.state().m_hat);
  CHECK(a.state().s_hat != c.state().s_hat);
  CHECK(a.state().n == 200);
  CHECK(a.state().evals == 400);
  CHECK(is_on_simplex(a.state().s_hat, 1e-9));
  CHECK(a.state().s_hat[0] == 0.0);
}

TEST_CASE("the location estimate averages f(X) draws only") {
  const ModelSpec model = make_builtin_model("linear", 3, {1.0, 2.0, 3.0});
  BuiltinEvaluator inner(model);
  RecordingEvaluator rec(inner);
  const SubsetUniverse uni(model.p);
  MirrorEstimator est(model, rec, SamplingStrategy::uniform_all(uni),
                      StepSchedule::power(), 5150);
  const int n = 250;
  for (int i = 0; i < n; ++i) est.advance();
  REQUIRE(rec.log.size() == 2 * n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += rec.log[2 * static_cast<std::size_t>(i)];
  CHECK(est.state().m_hat == Catch::Approx(acc / n).margin(1e-12));
}

TEST_CASE("cesaro average pairs the step with the pre-step iterate") {
  const ModelSpec model = make_builtin_model("disc2");
  BuiltinEvaluator f(model);
  const SubsetUniverse uni(model.p);
  const auto schedule = StepSchedule::power(0.4, 0.5);
  MirrorEstimator est(model, f, SamplingStrategy::uniform_all(uni), schedule, 77);

  CHECK_THROWS_AS(est.cesaro_average(), std::domain_error);

  IndexVector num(uni.q, 0.0);
  double den = 0.0;
  for (int k = 0; k < 40; ++k) {
    const IndexVector pre = est.state().s_hat;
    const double eta = schedule.step(est.state().n + 1);
    est.advance();
    for (std::size_t u = 0; u < uni.q; ++u) num[u] += eta * pre[u];
    den += eta;
  }
  const IndexVector avg = est.cesaro_average();
  for (std::size_t u = 0; u < uni.q; ++u)
    CHECK(avg[u] == Catch::Approx(num[u] / den).margin(1e-12));
}

TEST_CASE("checkpoint state round trips through json") {
  const ModelSpec model = make_builtin_model("disc");
  BuiltinEvaluator f(model);
  const SubsetUniverse uni(model.p);
  const auto strategy = SamplingStrategy::proportional(1e-6);
  const auto schedule = StepSchedule::power();

  MirrorEstimator a(model, f, strategy, schedule, 31337);
  for (int i = 0; i < 50; ++i) a.advance();
  const nlohmann::json snapshot = a.save_state();

  MirrorEstimator b(model, f, strategy, schedule, 1);
  b.load_state(snapshot);
  CHECK(b.state().n == 50);
  CHECK(b.state().s_hat == a.state().s_hat);

  for (int i = 0; i < 50; ++i) {
    a.advance();
    b.advance();
  }
  CHECK(a.state().s_hat == b.state().s_hat);
  CHECK(a.state().m_hat == b.state().m_hat);
  CHECK(a.state().evals == b.state().evals);

  nlohmann::json corrupt = snapshot;
  corrupt["s_hat"] = std::vector<double>{0.5, 0.5};
  CHECK_THROWS_AS(b.load_state(corrupt), std::invalid_argument);
}

TEST_CASE("frozen schedule stops moving the iterate but not the mean") {
  const ModelSpec model = make_builtin_model("disc2");
  BuiltinEvaluator f(model);
  const SubsetUniverse uni(model.p);
  const IndexVector a0 = resolve_weights(SamplingStrategy::uniform_all(uni), uniform_init(uni));
  MirrorEstimator est(model, f, SamplingStrategy::uniform_all(uni),
                      StepSchedule::theorem_constant(a0, 10), 2718);
  for (int i = 0; i < 10; ++i) est.advance();
  const IndexVector frozen = est.state().s_hat;
  const double mean_at_freeze = est.state().m_hat;
  for (int i = 0; i < 30; ++i) est.advance();
  CHECK(est.state().s_hat == frozen);
  CHECK(est.state().m_hat != mean_at_freeze);
}

TEST_CASE("geometric checkpoints are sorted, unique, and end at the horizon") {
  const auto pts = geometric_checkpoints(1000, 4);
  REQUIRE_FALSE(pts.empty());
  CHECK(pts.back() == 1000);
  for (std::size_t i = 1; i < pts.size(); ++i) CHECK(pts[i] > pts[i - 1]);
  for (std::uint64_t n : pts) CHECK(n >= 1);
  CHECK(geometric_checkpoints(0, 4).empty());
  CHECK(geometric_checkpoints(100, 0).empty());
}

TEST_CASE("run_mirror reports snapshots and closed indices") {
  const ModelSpec model = make_builtin_model("disc2");
  BuiltinEvaluator f(model);
  const SubsetUniverse uni(model.p);
  const RunReport rep =
      run_mirror(model, f, SamplingStrategy::uniform_all(uni), StepSchedule::power(),
                 300, 99, true, {100, 200, 300});
  REQUIRE(rep.snapshots.size() == 3);
  CHECK(rep.snapshots[0].n == 100);
  CHECK(rep.snapshots[2].n == 300);
  CHECK(rep.snapshots[1].cesaro.size() == uni.q);
  CHECK(rep.final_state.n == 300);
  CHECK(rep.final_state.evals == 600);
  CHECK(rep.closed.size() == uni.q);
  CHECK(rep.closed.back() == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(rep.total.size() == 3);
  for (double t : rep.total) {
    CHECK(t >= -1e-9);
    CHECK(t <= 1.0 + 1e-9);
  }
  CHECK(rep.cesaro.size() == uni.q);
  CHECK(is_on_simplex(rep.cesaro, 1e-9));
}

TEST_CASE("estimator converges on an additive model") {
  const ModelSpec model = make_builtin_model("linear", 2, {1.0, 2.0});
  BuiltinEvaluator f(model);
  const SubsetUniverse uni(model.p);
  // closed truth: {1} -> 0.2, {2} -> 0.8, {1,2} -> 1
  const IndexVector truth{0.0, 0.2, 0.8, 1.0};

  const int reps = 30;
  int hits = 0;
  double total_err = 0.0;
  for (int r = 0; r < reps; ++r) {
    const RunReport rep =
        run_mirror(model, f, SamplingStrategy::uniform_all(uni), StepSchedule::power(),
                   20000, derive_seed(804, static_cast<std::uint64_t>(r)));
    double err = 0.0;
    for (std::size_t u = 0; u < 4; ++u)
      err = std::max(err, std::fabs(rep.closed[u] - truth[u]));
    total_err += err;
    if (err < 0.1) ++hits;
  }
  CHECK(hits >= reps - 2);
  CHECK(total_err / reps < 0.06);
}

TEST_CASE("adaptive sampling variants stay healthy") {
  const ModelSpec model = make_builtin_model("disc2");
  BuiltinEvaluator f(model);
  for (const auto& strategy :
       {SamplingStrategy::proportional(1e-6), SamplingStrategy::inverse(1e-6),
        SamplingStrategy::proportional(1e-6, true)}) {
    const RunReport rep =
        run_mirror(model, f, strategy, StepSchedule::power(), 2000, 555);
    CHECK(is_on_simplex(rep.final_state.s_hat, 1e-9));
    CHECK(rep.final_state.s_hat[0] == 0.0);
  }
}

TEST_CASE("hessian reference") {
  SECTION("uniform law closed form") {
    for (int p = 1; p <= 3; ++p) {
      const std::size_t q = std::size_t{1} << p;
      const double var_y = 2.5;
      const IndexVector a(q, 1.0 / static_cast<double>(q));
      const HessianReference h = hessian_reference(a, var_y);
      for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < q; ++j) {
          const int k = std::popcount(static_cast<unsigned>(i | j));
          CHECK(h.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) ==
                Catch::Approx(var_y * std::exp2(-k)).margin(1e-12));
        }
    }
  }
  SECTION("agrees with the dense quadratic form for a random law") {
    Rng rng(606);
    const int p = 3;
    const std::size_t q = 8;
    IndexVector a(q);
    double total = 0.0;
    for (double& w : a) total += (w = rng.uniform(0.05, 1.0));
    for (double& w : a) w /= total;
    const double var_y = 1.7;
    const HessianReference h = hessian_reference(a, var_y);

    const Eigen::MatrixXd z = dense_zeta_matrix(p);
    Eigen::VectorXd weights(static_cast<Eigen::Index>(q));
    for (std::size_t u = 0; u < q; ++u)
      weights[static_cast<Eigen::Index>(u)] = a[u];
    const Eigen::MatrixXd dense = var_y * z.transpose() * weights.asDiagonal() * z;
    CHECK((h.matrix - dense).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h.matrix);
    CHECK(es.eigenvalues().minCoeff() >= h.eigenvalue_floor - 1e-12);
  }
  SECTION("validation") {
    CHECK_THROWS_AS(hessian_reference(IndexVector(1 << 11, 1.0 / (1 << 11)), 1.0),
                    CapacityError);
    CHECK_THROWS_AS(hessian_reference({0.5, 0.5}, -1.0), std::invalid_argument);
  }
}

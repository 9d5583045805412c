#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "emprate/empirical.hpp"
#include "emprate/error.hpp"
#include "emprate/stats.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace emprate;
using fixture::record;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Schema;
}

InferenceConfig config(Adjustment adj, std::optional<HcFlavor> hc = std::nullopt) {
  InferenceConfig cfg;
  cfg.adjustment = adj;
  cfg.hc_flavor = hc;
  return cfg;
}

LogRateEstimate log_est(Eigen::VectorXd theta, Eigen::MatrixXd cov) {
  LogRateEstimate e;
  e.theta = std::move(theta);
  e.cov_theta = std::move(cov);
  return e;
}

}  // namespace

TEST_CASE("W transform") {
  SUBCASE("unit exposure is the identity") {
    const Dataset d = validate_dataset({record("a", 0, 3, 1.0), record("b", 0, 0, 1.0), record("c", 1, 5, 1.0),
                                        record("d", 1, 1, 1.0)});
    const WVector w = transform_w(d);
    CHECK(w.values(0) == 3.0);
    CHECK(w.values(1) == 0.0);
    CHECK(w.values(2) == 5.0);
    CHECK(w.values(3) == 1.0);
  }
  SUBCASE("arm mean exposure 4/3") {
    const Dataset d = validate_dataset({record("a", 0, 2, 1.0), record("b", 0, 0, 2.0), record("c", 0, 4, 1.0),
                                        record("d", 1, 1, 1.0), record("e", 1, 1, 1.0)});
    const WVector w = transform_w(d);
    CHECK(w.arm_mean_exposures(0) == doctest::Approx(4.0 / 3.0));
    CHECK(w.values(0) == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(w.values(1) == 0.0);
    CHECK(w.values(2) == doctest::Approx(3.0).epsilon(1e-15));
  }
  SUBCASE("arm mean of W is the aggregate rate") {
    oracle::NbSampler rng(1);
    fixture::TrialShape shape;
    shape.arms = 3;
    const Dataset d = fixture::nb_trial(shape, rng);
    const WVector w = transform_w(d);
    for (int a = 0; a < 3; ++a) {
      double y = 0.0, e = 0.0, sw = 0.0;
      for (std::size_t j = d.arm_begin(a); j < d.arm_end(a); ++j) {
        y += static_cast<double>(d.records()[j].count);
        e += d.records()[j].exposure;
        sw += w.values(static_cast<Eigen::Index>(j));
      }
      CHECK(std::fabs(sw / static_cast<double>(d.arm_size(a)) - y / e) < 1e-12 * (1.0 + y / e));
    }
  }
}

TEST_CASE("aggregated rates") {
  std::vector<SubjectRecord> rs;
  for (int j = 0; j < 10; ++j) rs.push_back(record("c" + std::to_string(j), 0, j < 7 ? 1 : 0, 7.96));
  for (int j = 0; j < 10; ++j) rs.push_back(record("t" + std::to_string(j), 1, j < 8 ? 3 : 2, 7.85));
  const RateEstimate est = aggregated_rates(validate_dataset(rs));
  CHECK(est.rates(1) == doctest::Approx(0.357).epsilon(0.0014));
  CHECK(std::round(est.rates(1) * 1000) / 1000 == doctest::Approx(0.357));
  CHECK(std::round(est.rates(0) * 1000) / 1000 == doctest::Approx(0.088));
  CHECK(est.zero_event_arms.empty());
  CHECK(est.cov(0, 1) == 0.0);

  SUBCASE("zero-event arm is flagged and fails on the log scale") {
    std::vector<SubjectRecord> z = {record("a", 0, 0, 1.0), record("b", 0, 0, 2.0), record("c", 1, 1, 1.0),
                                    record("d", 1, 2, 1.0)};
    const RateEstimate ze = aggregated_rates(validate_dataset(z));
    CHECK(ze.rates(0) == 0.0);
    CHECK(ze.zero_event_arms == std::vector<int>{0});
    CHECK(code_of([&] { log_rates(ze); }) == ErrorCode::ZeroEventsArm);
  }
}

TEST_CASE("unadjusted rates equal the aggregated rates") {
  oracle::NbSampler rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    fixture::TrialShape shape;
    shape.arms = 2 + rep % 3;
    shape.n_per_arm = 5 + rep;
    const Dataset d = fixture::nb_trial(shape, rng);
    const RateEstimate a = aggregated_rates(d);
    const RateEstimate u = estimate_rates(d, config(Adjustment::None));
    CHECK(u.method == MethodTag::Unadjusted);
    for (int arm = 0; arm < shape.arms; ++arm) CHECK(std::fabs(u.rates(arm) - a.rates(arm)) <= 1e-12 * (1 + a.rates(arm)));
    // HC0 on the cell-means model is the per-arm variance with divisor n.
    const RateEstimate h0 = estimate_rates(d, config(Adjustment::None, HcFlavor::HC0));
    for (int arm = 0; arm < shape.arms; ++arm) {
      const double na = static_cast<double>(d.arm_size(arm));
      CHECK(h0.cov(arm, arm) == doctest::Approx(a.cov(arm, arm) * (na - 1.0) / na).epsilon(1e-10));
    }
  }
}

TEST_CASE("an uninformative covariate barely moves ANCOVA") {
  oracle::NbSampler rng(3);
  fixture::TrialShape shape;
  shape.n_per_arm = 50000;
  shape.slope = 0.0;
  shape.effect = 0.8;
  const Dataset d = fixture::nb_trial(shape, rng);
  const RateEstimate u = estimate_rates(d, config(Adjustment::None));
  const RateEstimate c = estimate_rates(d, config(Adjustment::Ancova));
  CHECK(c.method == MethodTag::Ancova);
  CHECK(std::fabs(c.rates(0) - u.rates(0)) < 1e-2);
  CHECK(std::fabs(c.rates(1) - u.rates(1)) < 1e-2);
}

TEST_CASE("ANHECOVA with saturated strata matches ANCOVA on stratum dummies when balanced") {
  // Two strata, each with the same allocation in both arms.
  std::mt19937_64 gen(4);
  std::poisson_distribution<int> pois(1.5);
  std::vector<SubjectRecord> with_strata, with_dummy;
  int id = 0;
  for (int a = 0; a < 2; ++a) {
    for (int s = 0; s < 2; ++s) {
      for (int j = 0; j < 20; ++j) {
        const double d = 0.5 + 0.05 * ((id * 7) % 20);
        const int y = pois(gen) + s * 2 + a;
        SubjectRecord r = record("id" + std::to_string(id++), a, y, d);
        r.stratum = s ? "high" : "low";
        with_strata.push_back(r);
        r.stratum.reset();
        r.covariates = {static_cast<double>(s)};
        with_dummy.push_back(r);
      }
    }
  }
  const RateEstimate h = estimate_rates(validate_dataset(with_strata), config(Adjustment::Anhecova));
  const RateEstimate c = estimate_rates(validate_dataset(with_dummy), config(Adjustment::Ancova));
  CHECK(h.method == MethodTag::Anhecova);
  CHECK(std::fabs(h.rates(0) - c.rates(0)) < 1e-12);
  CHECK(std::fabs(h.rates(1) - c.rates(1)) < 1e-12);
}

TEST_CASE("ANHECOVA without strata falls back to ANCOVA") {
  oracle::NbSampler rng(5);
  const Dataset d = fixture::nb_trial({}, rng);
  const RateEstimate h = estimate_rates(d, config(Adjustment::Anhecova));
  const RateEstimate c = estimate_rates(d, config(Adjustment::Ancova));
  CHECK(h.method == MethodTag::Ancova);
  CHECK((h.rates - c.rates).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adjustment without covariates is rejected") {
  oracle::NbSampler rng(6);
  fixture::TrialShape shape;
  shape.covariate = false;
  const Dataset d = fixture::nb_trial(shape, rng);
  CHECK(code_of([&] { estimate_rates(d, config(Adjustment::Ancova)); }) == ErrorCode::InvalidArgument);
  InferenceConfig bad;
  bad.alpha = 1.5;
  CHECK(code_of([&] { estimate_rates(d, bad); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("ANCOVA is invariant to affine covariate rescaling and record order") {
  oracle::NbSampler rng(7);
  const Dataset d = fixture::nb_trial({}, rng);
  std::vector<SubjectRecord> scaled = d.records();
  for (auto& r : scaled) r.covariates[0] = 3.7 * r.covariates[0] - 12.0;
  std::vector<SubjectRecord> shuffled = d.records();
  std::shuffle(shuffled.begin(), shuffled.end(), rng.engine());
  for (auto adj : {Adjustment::None, Adjustment::Ancova}) {
    const RateEstimate a = estimate_rates(d, config(adj));
    const RateEstimate b = estimate_rates(validate_dataset(scaled), config(adj));
    const RateEstimate c = estimate_rates(validate_dataset(shuffled), config(adj));
    CHECK((a.rates - b.rates).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((a.cov - b.cov).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((a.rates - c.rates).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("covariance is symmetric positive semidefinite") {
  oracle::NbSampler rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    fixture::TrialShape shape;
    shape.arms = 2 + rep % 2;
    const Dataset d = fixture::nb_trial(shape, rng);
    for (auto adj : {Adjustment::None, Adjustment::Ancova}) {
      const RateEstimate e = estimate_rates(d, config(adj));
      CHECK((e.cov - e.cov.transpose()).cwiseAbs().maxCoeff() < 1e-15);
      const Eigen::VectorXd sd = e.cov.diagonal().cwiseSqrt();
      const Eigen::MatrixXd corr = sd.cwiseInverse().asDiagonal() * e.cov * sd.cwiseInverse().asDiagonal();
      CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(corr).eigenvalues().minCoeff() > -1e-8);
    }
  }
}

TEST_CASE("log rates") {
  RateEstimate e;
  e.rates = Eigen::Vector2d(1.0, 1.0);
  e.cov = Eigen::Matrix2d::Identity();
  LogRateEstimate l = log_rates(e);
  CHECK(l.theta.cwiseAbs().maxCoeff() == 0.0);
  CHECK((l.cov_theta - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() == 0.0);

  e.rates = Eigen::Vector2d(2.0, 4.0);
  e.cov = Eigen::Vector2d(0.04, 0.16).asDiagonal();
  l = log_rates(e);
  CHECK(l.cov_theta(0, 0) == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(l.cov_theta(1, 1) == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(l.cov_theta(0, 1) == 0.0);

  SUBCASE("finite-difference Jacobian") {
    std::mt19937_64 gen(9);
    std::uniform_real_distribution<double> u(0.2, 3.0);
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::Vector3d r(u(gen), u(gen), u(gen));
      Eigen::Matrix3d m = Eigen::Matrix3d::Random();
      RateEstimate est;
      est.rates = r;
      est.cov = m * m.transpose() * 0.01;
      auto f = [](const Eigen::VectorXd& x, int i) { return std::log(x(i)); };
      Eigen::Matrix3d jac;
      for (int i = 0; i < 3; ++i) {
        const Eigen::VectorXd g =
            oracle::central_gradient([&](const Eigen::VectorXd& x) { return f(x, i); }, r, 1e-5);
        jac.row(i) = g.transpose();
      }
      const Eigen::Matrix3d expect = jac * est.cov * jac.transpose();
      CHECK((log_rates(est).cov_theta - expect).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("negative rates name the arm") {
    RateEstimate neg;
    neg.rates = Eigen::Vector2d(0.5, -0.1);
    neg.cov = Eigen::Matrix2d::Identity();
    try {
      log_rates(neg);
      FAIL("expected NonPositiveRate");
    } catch (const Error& err) {
      CHECK(err.code() == ErrorCode::NonPositiveRate);
      CHECK(std::string(err.what()).find("arm 1") != std::string::npos);
    }
  }
}

TEST_CASE("rate ratio") {
  SUBCASE("equal log rates") {
    const auto rr = rate_ratio(log_est(Eigen::Vector2d(0.3, 0.3), Eigen::Vector2d(0.02, 0.03).asDiagonal()), 1, 0);
    CHECK(rr.lambda_hat == 1.0);
    CHECK(rr.z == 0.0);
    CHECK(rr.p == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("observed rates 0.357 and 0.088") {
    const auto rr = rate_ratio(log_est(Eigen::Vector2d(std::log(0.088), std::log(0.357)),
                                       Eigen::Vector2d(0.1, 0.05).asDiagonal()),
                               1, 0);
    CHECK(rr.lambda_hat == doctest::Approx(4.05).epsilon(0.0025));
  }
  SUBCASE("identities on random inputs") {
    std::mt19937_64 gen(10);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 200; ++rep) {
      Eigen::Matrix3d m = Eigen::Matrix3d::Random();
      const Eigen::Matrix3d cov = m * m.transpose() * 0.05 + 0.001 * Eigen::Matrix3d::Identity();
      const LogRateEstimate e = log_est(Eigen::Vector3d(nd(gen), nd(gen), nd(gen)) * 0.3, cov);
      const double alpha = rep % 2 ? 0.05 : 0.1;
      const auto ik = rate_ratio(e, 2, 0, alpha);
      const auto ki = rate_ratio(e, 0, 2, alpha);
      CHECK(ik.ci_low <= ik.lambda_hat);
      CHECK(ik.lambda_hat <= ik.ci_high);
      CHECK(ik.p >= 0.0);
      CHECK(ik.p <= 1.0);
      CHECK(std::fabs(ik.lambda_hat * ki.lambda_hat - 1.0) < 1e-12);
      CHECK(std::fabs(ik.ci_low - 1.0 / ki.ci_high) < 1e-12 * ik.ci_low);
      CHECK(std::fabs(ik.ci_high - 1.0 / ki.ci_low) < 1e-12 * ik.ci_high);
      const double se = std::sqrt(cov(2, 2) + cov(0, 0) - 2 * cov(0, 2));
      const double zq = normal_quantile(1.0 - alpha / 2.0);
      CHECK(std::fabs(ik.ci_low - ik.lambda_hat * std::exp(-zq * se)) < 1e-12 * ik.ci_low);
      CHECK(std::fabs(ik.ci_high - ik.lambda_hat * std::exp(zq * se)) < 1e-12 * ik.ci_high);
      const bool excludes_one = ik.ci_low > 1.0 || ik.ci_high < 1.0;
      CHECK((ik.p < alpha) == excludes_one);
    }
  }
  SUBCASE("one-sided alternatives") {
    const LogRateEstimate e = log_est(Eigen::Vector2d(0.0, 0.2), Eigen::Vector2d(0.01, 0.01).asDiagonal());
    const auto two = rate_ratio(e, 1, 0);
    const auto greater = rate_ratio(e, 1, 0, 0.05, Alternative::Greater);
    const auto less = rate_ratio(e, 1, 0, 0.05, Alternative::Less);
    CHECK(greater.p == doctest::Approx(two.p / 2).epsilon(1e-12));
    CHECK(less.p == doctest::Approx(1.0 - two.p / 2).epsilon(1e-12));
  }
  SUBCASE("errors") {
    const LogRateEstimate e = log_est(Eigen::Vector2d(0.0, 0.2), Eigen::Vector2d(0.01, 0.01).asDiagonal());
    CHECK(code_of([&] { rate_ratio(e, 1, 1); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { rate_ratio(e, 2, 0); }) == ErrorCode::InvalidArgument);
    Eigen::Matrix2d perfect;
    perfect << 0.01, 0.01, 0.01, 0.01;
    CHECK(code_of([&] { rate_ratio(log_est(Eigen::Vector2d(0.0, 0.2), perfect), 1, 0); }) ==
          ErrorCode::DegenerateVariance);
  }
}

TEST_CASE("constant W gives a degenerate variance") {
  const Dataset d = validate_dataset({record("a", 0, 1, 1.0), record("b", 0, 1, 1.0), record("c", 1, 2, 1.0),
                                      record("e", 1, 2, 1.0)});
  const RateEstimate e = estimate_rates(d, config(Adjustment::None));
  CHECK(code_of([&] { rate_ratio(log_rates(e), 1, 0); }) == ErrorCode::DegenerateVariance);
}

TEST_CASE("per-subject rate") {
  SUBCASE("constant exposure within arm") {
    const Dataset d = validate_dataset({record("a", 0, 1, 2.0), record("b", 0, 4, 2.0), record("c", 1, 0, 0.5),
                                        record("e", 1, 3, 0.5)});
    const NaiveRates n = naive_subject_rate(d);
    const RateEstimate a = aggregated_rates(d);
    CHECK_FALSE(n.recommended);
    CHECK(n.rates(0) == a.rates(0));
    CHECK(n.rates(1) == a.rates(1));
  }
  SUBCASE("uneven exposure") {
    const Dataset d = validate_dataset({record("a", 0, 1, 0.1), record("b", 0, 0, 1.9), record("c", 1, 1, 1.0),
                                        record("e", 1, 1, 1.0)});
    CHECK(naive_subject_rate(d).rates(0) == doctest::Approx(5.0).epsilon(1e-14));
    CHECK(aggregated_rates(d).rates(0) == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("more variable than the aggregate rate") {
    oracle::NbSampler rng(12);
    std::vector<double> naive, agg;
    for (int rep = 0; rep < 2000; ++rep) {
      fixture::TrialShape shape;
      shape.n_per_arm = 40;
      shape.exp_lo = 0.05;
      shape.exp_hi = 2.0;
      shape.slope = 0.0;
      shape.covariate = false;
      const Dataset d = fixture::nb_trial(shape, rng);
      naive.push_back(naive_subject_rate(d).rates(0));
      agg.push_back(aggregated_rates(d).rates(0));
    }
    CHECK(oracle::variance(naive) > oracle::variance(agg));
  }
}

TEST_CASE("coverage of the rate ratio interval") {
  oracle::NbSampler rng(13);
  int covered = 0;
  const int reps = 2000;
  for (int rep = 0; rep < reps; ++rep) {
    fixture::TrialShape shape;
    shape.n_per_arm = 500;
    shape.effect = 0.75;
    const Dataset d = fixture::nb_trial(shape, rng);
    const auto rr = rate_ratio(log_rates(estimate_rates(d, config(Adjustment::Ancova))), 1, 0);
    if (rr.ci_low <= 0.75 && 0.75 <= rr.ci_high) ++covered;
  }
  const double cov = static_cast<double>(covered) / reps;
  CHECK(cov > 0.93);
  CHECK(cov < 0.97);
}

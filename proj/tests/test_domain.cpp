#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "emprate/domain.hpp"
#include "emprate/error.hpp"

using namespace emprate;

namespace {

SubjectRecord rec(std::string id, int arm, std::int64_t y, double d, std::vector<double> x = {}) {
  SubjectRecord r;
  r.subject_id = std::move(id);
  r.arm = arm;
  r.count = y;
  r.exposure = d;
  r.covariates = std::move(x);
  return r;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("two arms of three subjects") {
  std::vector<SubjectRecord> rs;
  for (int a = 0; a < 2; ++a) {
    for (int j = 0; j < 3; ++j) rs.push_back(rec("s" + std::to_string(a) + std::to_string(j), a, j, 1.0 + j));
  }
  const Dataset d = validate_dataset(rs);
  CHECK(d.arm_count() == 2);
  CHECK(d.arm_size(0) == 3);
  CHECK(d.arm_size(1) == 3);
  CHECK(d.arm_events(1) == 3);
  CHECK(d.arm_exposure(0) == doctest::Approx(6.0));
  CHECK(d.covariate_count() == 0);
}

TEST_CASE("validation errors") {
  auto base = [] {
    return std::vector<SubjectRecord>{rec("a", 0, 1, 1.0, {0.5}), rec("b", 0, 0, 1.0, {0.2}),
                                      rec("c", 1, 2, 1.0, {0.1}), rec("d", 1, 3, 1.0, {0.4})};
  };
  CHECK_NOTHROW(validate_dataset(base()));
  {
    auto rs = base();
    rs[0].exposure = 0.0;
    CHECK(code_of([&] { validate_dataset(rs); }) == ErrorCode::NonPositiveExposure);
    rs[0].exposure = INFINITY;
    CHECK(code_of([&] { validate_dataset(rs); }) == ErrorCode::NonPositiveExposure);
  }
  {
    auto rs = base();
    rs[1].count = -1;
    CHECK(code_of([&] { validate_dataset(rs); }) == ErrorCode::NegativeCount);
  }
  {
    auto rs = base();
    rs[2].covariates.push_back(1.0);
    CHECK(code_of([&] { validate_dataset(rs); }) == ErrorCode::RaggedCovariates);
  }
  {
    auto rs = base();
    rs[2].covariates[0] = std::nan("");
    CHECK(code_of([&] { validate_dataset(rs); }) == ErrorCode::MissingCovariate);
  }
  {
    auto rs = base();
    rs[3].arm = 0;
    CHECK(code_of([&] { validate_dataset(rs); }) == ErrorCode::ArmTooSmall);
  }
  {
    auto rs = base();
    rs[3].arm = 5;
    CHECK(code_of([&] { validate_dataset(rs, {}, 2); }) == ErrorCode::UnknownArmIndex);
    rs[3].arm = -1;
    CHECK(code_of([&] { validate_dataset(rs); }) == ErrorCode::UnknownArmIndex);
  }
  CHECK(code_of([&] { validate_dataset({}); }) == ErrorCode::EmptyInput);
  {
    // A declared arm without subjects.
    CHECK(code_of([&] { validate_dataset(base(), {}, 3); }) == ErrorCode::ArmTooSmall);
  }
}

TEST_CASE("arm totals 28 events over 78.5 years") {
  std::vector<SubjectRecord> rs;
  for (int j = 0; j < 10; ++j) rs.push_back(rec("c" + std::to_string(j), 0, 1, 8.0));
  const int counts[] = {5, 0, 3, 4, 2, 6, 1, 0, 4, 3};
  const double exps[] = {7.5, 8.0, 8.0, 7.0, 9.0, 8.0, 8.0, 7.5, 8.0, 7.5};
  for (int j = 0; j < 10; ++j) rs.push_back(rec("t" + std::to_string(j), 1, counts[j], exps[j]));
  const Dataset d = validate_dataset(rs);
  CHECK(d.arm_events(1) == 28);
  CHECK(d.arm_exposure(1) == doctest::Approx(78.5).epsilon(1e-14));
  CHECK(d.arm_mean_exposure(1) == doctest::Approx(7.85).epsilon(1e-14));
}

TEST_CASE("ordering by arm then subject id") {
  std::vector<SubjectRecord> rs = {rec("z", 1, 0, 1.0), rec("b", 0, 0, 1.0), rec("y", 1, 0, 1.0),
                                   rec("a", 0, 0, 1.0)};
  const Dataset d = validate_dataset(rs);
  CHECK(d.records()[0].subject_id == "a");
  CHECK(d.records()[1].subject_id == "b");
  CHECK(d.records()[2].subject_id == "y");
  CHECK(d.records()[3].subject_id == "z");
  CHECK(d.arm_begin(1) == 2);
  CHECK(d.arm_end(1) == 4);
}

TEST_CASE("covariate names default and explicit") {
  std::vector<SubjectRecord> rs = {rec("a", 0, 0, 1.0, {1, 2}), rec("b", 0, 1, 1.0, {3, 4}),
                                   rec("c", 1, 0, 1.0, {5, 6}), rec("d", 1, 2, 1.0, {7, 8})};
  CHECK(validate_dataset(rs).covariate_names() == std::vector<std::string>{"x1", "x2"});
  CHECK(validate_dataset(rs, {"age", "bmi"}).covariate_names() == std::vector<std::string>{"age", "bmi"});
}

TEST_CASE("strata flag") {
  std::vector<SubjectRecord> rs = {rec("a", 0, 0, 1.0), rec("b", 0, 1, 1.0), rec("c", 1, 0, 1.0),
                                   rec("d", 1, 2, 1.0)};
  CHECK_FALSE(validate_dataset(rs).has_strata());
  for (auto& r : rs) r.stratum = "s1";
  CHECK(validate_dataset(rs).has_strata());
  rs[0].stratum.reset();
  CHECK_FALSE(validate_dataset(rs).has_strata());
}

TEST_CASE("aggregates and idempotence on random datasets") {
  std::mt19937_64 gen(11);
  for (int rep = 0; rep < 200; ++rep) {
    const int arms = 2 + static_cast<int>(gen() % 3);
    std::vector<SubjectRecord> rs;
    for (int a = 0; a < arms; ++a) {
      const int n = 2 + static_cast<int>(gen() % 30);
      for (int j = 0; j < n; ++j) {
        rs.push_back(rec("id" + std::to_string(gen() % 100000) + "_" + std::to_string(j), a,
                         static_cast<std::int64_t>(gen() % 7),
                         std::uniform_real_distribution<double>(0.01, 3.0)(gen), {static_cast<double>(gen() % 5)}));
      }
    }
    std::shuffle(rs.begin(), rs.end(), gen);
    const Dataset d = validate_dataset(rs);
    for (int a = 0; a < arms; ++a) {
      std::int64_t y = 0;
      double e = 0.0;
      std::size_t n = 0;
      for (const auto& r : rs) {
        if (r.arm != a) continue;
        y += r.count;
        e += r.exposure;
        ++n;
      }
      CHECK(d.arm_events(a) == y);
      CHECK(d.arm_size(a) == n);
      CHECK(std::fabs(d.arm_exposure(a) - e) <= 1e-12 * e);
    }
    CHECK(validate_dataset(d.records(), d.covariate_names()) == d);
  }
}

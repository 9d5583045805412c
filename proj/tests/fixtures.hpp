#pragma once

// Small dataset builders shared by the unit tests.

#include <cmath>
#include <string>
#include <vector>

#include "emprate/domain.hpp"
#include "oracles.hpp"

namespace fixture {

inline emprate::SubjectRecord record(const std::string& id, int arm, std::int64_t y, double d,
                                     std::vector<double> x = {}) {
  emprate::SubjectRecord r;
  r.subject_id = id;
  r.arm = arm;
  r.count = y;
  r.exposure = d;
  r.covariates = std::move(x);
  return r;
}

struct TrialShape {
  int arms = 2;
  int n_per_arm = 50;
  double base_rate = 0.8;
  double effect = 1.0;       // multiplicative rate in arms > 0
  double k = 0.5;
  double slope = 0.4;        // log-rate slope on the covariate
  double exp_lo = 0.5, exp_hi = 1.5;
  bool covariate = true;
};

// NB2 counts with a standard normal covariate and uniform follow-up.
inline emprate::Dataset nb_trial(const TrialShape& s, oracle::NbSampler& rng) {
  std::vector<emprate::SubjectRecord> rs;
  for (int a = 0; a < s.arms; ++a) {
    for (int j = 0; j < s.n_per_arm; ++j) {
      const double x = rng.normal();
      const double d = rng.uniform(s.exp_lo, s.exp_hi);
      const double rate = s.base_rate * (a > 0 ? s.effect : 1.0) * std::exp(s.slope * x - 0.5 * s.slope * s.slope);
      std::vector<double> cov;
      if (s.covariate) cov.push_back(x);
      rs.push_back(record("s" + std::to_string(a) + "_" + std::to_string(j), a, rng(rate * d, s.k), d, cov));
    }
  }
  return emprate::validate_dataset(std::move(rs));
}

}  // namespace fixture

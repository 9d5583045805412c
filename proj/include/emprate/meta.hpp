#pragma once

// Exposure-weighted pooling of per-stratum (or per-study) rate ratios under a
// common-ratio assumption.

#include <optional>
#include <string>
#include <vector>

#include "emprate/empirical.hpp"

namespace emprate {

struct StratumResult {
  std::string stratum;
  double lambda_hat = 1.0;
  double var_lambda = 0.0;
  double weight = 0.0;  // total follow-up in the stratum
  // Log-scale pair; derived from (lambda_hat, var_lambda) by the delta method
  // when absent.
  std::optional<double> log_lambda;
  std::optional<double> var_log_lambda;
};

// sum w lambda / sum w with variance sum w^2 Var(lambda) / (sum w)^2; the
// interval is built on the log scale via the delta method.
RateRatioResult pool_natural(const std::vector<StratumResult>& results, double alpha = 0.05);

// The same weights applied to log lambda and its variance, back-transformed.
RateRatioResult pool_log(const std::vector<StratumResult>& results, double alpha = 0.05);

}  // namespace emprate

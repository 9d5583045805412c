#include "emprate/meta.hpp"

#include <cmath>

#include "emprate/error.hpp"

namespace emprate {

namespace {

void check(const std::vector<StratumResult>& results, double alpha) {
  if (results.empty()) throw Error(ErrorCode::EmptyInput, "no strata to pool");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  for (const auto& s : results) {
    if (!(s.weight > 0.0) || !std::isfinite(s.weight)) {
      throw Error(ErrorCode::InvalidArgument, "stratum '" + s.stratum + "' has non-positive weight");
    }
    if (s.var_lambda < 0.0 || (s.var_log_lambda && *s.var_log_lambda < 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "stratum '" + s.stratum + "' has negative variance");
    }
  }
}

RateRatioResult from_log(double log_lambda, double var_log, double alpha) {
  RateRatioResult rr;
  rr.alpha = alpha;
  rr.log_lambda = log_lambda;
  rr.lambda_hat = std::exp(log_lambda);
  rr.se_log = std::sqrt(var_log);
  const double crit = normal_quantile(1.0 - alpha / 2.0);
  rr.ci_low = rr.lambda_hat * std::exp(-crit * rr.se_log);
  rr.ci_high = rr.lambda_hat * std::exp(crit * rr.se_log);
  if (rr.se_log > 0.0) {
    rr.z = log_lambda / rr.se_log;
    rr.p = normal_p_value(rr.z);
  } else {
    rr.z = log_lambda == 0.0 ? 0.0 : std::copysign(INFINITY, log_lambda);
    rr.p = log_lambda == 0.0 ? 1.0 : 0.0;
  }
  return rr;
}

}  // namespace

RateRatioResult pool_natural(const std::vector<StratumResult>& results, double alpha) {
  check(results, alpha);
  double w_sum = 0.0, wl = 0.0, w2v = 0.0;
  for (const auto& s : results) {
    w_sum += s.weight;
    wl += s.weight * s.lambda_hat;
    w2v += s.weight * s.weight * s.var_lambda;
  }
  const double lambda = wl / w_sum;
  const double var = w2v / (w_sum * w_sum);
  if (!(lambda > 0.0)) {
    throw Error(ErrorCode::NonPositiveLambda, "pooled rate ratio " + std::to_string(lambda) + " is not positive");
  }
  RateRatioResult rr = from_log(std::log(lambda), var / (lambda * lambda), alpha);
  const double crit = normal_quantile(1.0 - alpha / 2.0);
  rr.lambda_hat = lambda;
  rr.ci_low = lambda * std::exp(-crit * rr.se_log);
  rr.ci_high = lambda * std::exp(crit * rr.se_log);
  return rr;
}

RateRatioResult pool_log(const std::vector<StratumResult>& results, double alpha) {
  check(results, alpha);
  double w_sum = 0.0, wl = 0.0, w2v = 0.0;
  for (const auto& s : results) {
    double log_l, var_log;
    if (s.log_lambda) {
      log_l = *s.log_lambda;
      var_log = s.var_log_lambda.value_or(0.0);
    } else {
      if (!(s.lambda_hat > 0.0)) {
        throw Error(ErrorCode::NonPositiveLambda, "stratum '" + s.stratum + "' has non-positive rate ratio");
      }
      log_l = std::log(s.lambda_hat);
      var_log = s.var_log_lambda.value_or(s.var_lambda / (s.lambda_hat * s.lambda_hat));
    }
    w_sum += s.weight;
    wl += s.weight * log_l;
    w2v += s.weight * s.weight * var_log;
  }
  return from_log(wl / w_sum, w2v / (w_sum * w_sum), alpha);
}

}  // namespace emprate

#pragma once

// Model-light estimation of marginal event rates and rate ratios.
//
// Counts are rescaled by the arm-mean exposure, W_ij = Y_ij / dbar_i, so the
// arm mean of W is the aggregated rate Y_i. / d_i. . Arm rates are then read
// off a linear model of W on cell-means arm indicators, optionally with
// grand-mean-centered covariates (ANCOVA) or arm-by-covariate interactions
// (ANHECOVA), and inference on ratios is done on the log scale.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "emprate/domain.hpp"
#include "emprate/linmod.hpp"
#include "emprate/stats.hpp"

namespace emprate {

enum class MethodTag { Aggregated, Unadjusted, Ancova, Anhecova, NbGcomp, NbAipw };
const char* to_string(MethodTag tag);

struct RateEstimate {
  Eigen::VectorXd rates;
  Eigen::MatrixXd cov;
  MethodTag method = MethodTag::Aggregated;
  std::vector<int> zero_event_arms;
};

struct LogRateEstimate {
  Eigen::VectorXd theta;
  Eigen::MatrixXd cov_theta;
};

struct RateRatioResult {
  int numerator_arm = 1;
  int denominator_arm = 0;
  double lambda_hat = 1.0;
  double log_lambda = 0.0;
  double se_log = 0.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
  double z = 0.0;
  double p = 1.0;
  double alpha = 0.05;
};

struct WVector {
  Eigen::VectorXd values;  // in Dataset record order
  Eigen::VectorXd arm_mean_exposures;
};

enum class Adjustment { None, Ancova, Anhecova };
const char* to_string(Adjustment adj);
Adjustment parse_adjustment(const std::string& name);

struct InferenceConfig {
  double alpha = 0.05;
  Adjustment adjustment = Adjustment::None;
  std::optional<HcFlavor> hc_flavor;   // default_hc_flavor() when unset
  std::vector<std::size_t> covariates; // indices into the Dataset covariates; empty = all
  Alternative alternative = Alternative::TwoSided;
};

void validate(const InferenceConfig& cfg);

WVector transform_w(const Dataset& data);

// r_i = Y_i. / d_i. with covariance diag(s^2_W,i / n_i). Arms without events
// get rate 0 and are listed in zero_event_arms.
RateEstimate aggregated_rates(const Dataset& data);

// Arm rates from the linear model of W selected by cfg.adjustment.
//
// The covariance is the HC sandwich of the arm coefficients plus the
// contribution of the covariate grand mean, which the centering treats as
// known:
//   V = HC[arms] + (B' S_x B + B' C + C' B) / n
// where column a of B holds the covariate slopes used for arm a (common under
// ANCOVA), S_x is the pooled covariate covariance and column a of C is the
// within-arm covariance between residuals and covariates (zero for ANHECOVA).
//
// ANHECOVA adds the stratum indicators to the covariates and removes the part
// of the variance that stratified (permuted-block) randomization balances out:
//   V -= (1/n) sum_z p_z R(z) (diag(pi) - pi pi') R(z),
//   R(z) = diag(mean residual of arm a in stratum z / pi_a).
// Without stratum labels ANHECOVA falls back to ANCOVA.
RateEstimate estimate_rates(const Dataset& data, const InferenceConfig& cfg);

// theta = log r, V_theta = J' V J with J = diag(1/r).
// Throws ZeroEventsArm for an arm listed in zero_event_arms (adjusted or not)
// and NonPositiveRate otherwise, naming the arm.
LogRateEstimate log_rates(const RateEstimate& est);

// Log-scale z-test and exponentiated Wald interval for r_i / r_k.
RateRatioResult rate_ratio(const LogRateEstimate& est, int i, int k, double alpha = 0.05,
                           Alternative alt = Alternative::TwoSided);

struct NaiveRates {
  Eigen::VectorXd rates;
  bool recommended = false;
  std::string note;
};

// Per-arm mean of Y_ij / d_ij. Diagnostic only.
NaiveRates naive_subject_rate(const Dataset& data);

}  // namespace emprate

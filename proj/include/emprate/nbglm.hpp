#pragma once

// Negative binomial (NB2) regression with log link and log-exposure offset.
//
// Mean mu_j = d_j exp(x_j' beta), variance mu + k mu^2. Arms are coded as one
// indicator column each (no global intercept); covariates enter centered at
// their grand mean, so exp(beta_a) is the arm rate at the average covariate.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "emprate/domain.hpp"
#include "emprate/empirical.hpp"

namespace emprate {

struct NBDesign {
  Eigen::MatrixXd x;
  Eigen::VectorXd offset;  // log exposure
  Eigen::VectorXd y;
  std::vector<std::string> column_names;
  int arm_count = 0;
};

// Builds the cell-means design; `adjusted` appends the selected covariates
// (all when `covariates` is empty), centered.
NBDesign build_nb_design(const Dataset& data, bool adjusted,
                         const std::vector<std::size_t>& covariates = {});

// NB2 log-likelihood; continuous in k down to the Poisson limit at k = 0.
double nb_loglik(const Eigen::VectorXd& beta, double k, const NBDesign& design);

// Analytic gradient with respect to (beta, k); the last entry is d/dk.
Eigen::VectorXd nb_score(const Eigen::VectorXd& beta, double k, const NBDesign& design);

enum class FitStatus { Converged, BoundaryDispersion, NonConvergence };
const char* to_string(FitStatus status);

// Which covariance the Pearson factor multiplies.
enum class PearsonScaling { Sandwich, Model };

struct NBOptions {
  std::optional<double> fixed_k;  // e.g. 0 for a Poisson fit
  int max_outer = 200;
  double loglik_tol = 1e-10;
  double score_tol = 1e-6;
  PearsonScaling scaling = PearsonScaling::Sandwich;
};

struct FitDiagnostics {
  double gradient_norm = 0.0;
  double condition_number = 0.0;
  int path_length = 0;  // accepted outer iterations
  std::string message;
};

struct NBFit {
  Eigen::VectorXd beta;
  double k = 0.0;
  Eigen::VectorXd offset;
  Eigen::MatrixXd model_cov;
  Eigen::MatrixXd sandwich_cov;
  Eigen::MatrixXd pearson_scaled_cov;
  double phi = 1.0;  // Pearson chi^2 / (n - p)
  bool converged = false;
  FitStatus status = FitStatus::NonConvergence;
  int iterations = 0;
  double loglik = 0.0;
  std::vector<double> loglik_path;
  FitDiagnostics diagnostics;
  NBDesign design;
  bool adjusted = false;
  PearsonScaling scaling = PearsonScaling::Sandwich;
};

// Maximum likelihood by alternating Newton-IRLS on beta (step-halving keeps
// the likelihood non-decreasing) and a bracketed Newton root search on the
// k-score. Never throws on numerical failure: a non-existent or unreachable
// optimum is reported through `status` and `diagnostics`, with the best
// iterate kept. k is pinned at 0 (status BoundaryDispersion) when the
// likelihood is decreasing in k at the Poisson fit.
NBFit fit_nb(const Dataset& data, bool adjusted, const std::vector<std::size_t>& covariates = {},
             const NBOptions& options = {});

// A^-1 B A^-1 with A the observed information for beta and B the sum of
// per-subject score outer products, multiplied by the Pearson factor (or the
// model covariance times the factor under PearsonScaling::Model).
// Throws SingularInformation.
Eigen::MatrixXd robust_covariance(const NBFit& fit);

struct MarginalRates {
  Eigen::VectorXd rates;
  Eigen::MatrixXd cov;
  MethodTag estimator_kind = MethodTag::NbGcomp;
};

// Standardized rates: predictions for every subject under each arm, summed
// and divided by total exposure. Delta-method covariance through beta.
MarginalRates marginal_rates_gcomp(const NBFit& fit, const Dataset& data);

// G-computation totals plus inverse-propensity weighted residual totals of
// the subjects actually randomized to each arm (propensity n_a / n), over
// total exposure. Covariance from the empirical influence function.
MarginalRates marginal_rates_aipw(const NBFit& fit, const Dataset& data);

RateRatioResult nb_rate_ratio(const MarginalRates& marg, int i, int k, double alpha = 0.05,
                              Alternative alt = Alternative::TwoSided);

// exp(beta_i - beta_k) with the Pearson-scaled covariance.
RateRatioResult nb_rate_ratio(const NBFit& fit, int i, int k, double alpha = 0.05,
                              Alternative alt = Alternative::TwoSided);

}  // namespace emprate

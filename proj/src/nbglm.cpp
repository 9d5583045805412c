#include "emprate/nbglm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "emprate/error.hpp"

namespace emprate {

const char* to_string(FitStatus status) {
  switch (status) {
    case FitStatus::Converged: return "converged";
    case FitStatus::BoundaryDispersion: return "boundary_dispersion";
    case FitStatus::NonConvergence: return "non_convergence";
  }
  return "?";
}

NBDesign build_nb_design(const Dataset& data, bool adjusted, const std::vector<std::size_t>& covariates) {
  std::vector<std::size_t> cols;
  if (adjusted) {
    cols = covariates;
    if (cols.empty()) {
      for (std::size_t c = 0; c < data.covariate_count(); ++c) cols.push_back(c);
    }
    if (cols.empty()) throw Error(ErrorCode::InvalidArgument, "adjusted NB model requires covariates");
  }
  const int arms = data.arm_count();
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto q = static_cast<Eigen::Index>(cols.size());

  NBDesign d;
  d.arm_count = arms;
  d.x = Eigen::MatrixXd::Zero(n, arms + q);
  d.offset.resize(n);
  d.y.resize(n);
  for (int a = 0; a < arms; ++a) d.column_names.push_back("arm[" + std::to_string(a) + "]");
  for (auto c : cols) {
    if (c >= data.covariate_count()) throw Error(ErrorCode::InvalidArgument, "covariate index out of range");
    d.column_names.push_back(data.covariate_names()[c]);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& r = data.records()[static_cast<std::size_t>(j)];
    d.x(j, r.arm) = 1.0;
    for (Eigen::Index c = 0; c < q; ++c) d.x(j, arms + c) = r.covariates[cols[c]];
    d.offset(j) = std::log(r.exposure);
    d.y(j) = static_cast<double>(r.count);
  }
  if (q > 0) {
    const Eigen::RowVectorXd mean = d.x.rightCols(q).colwise().mean();
    d.x.rightCols(q).rowwise() -= mean;
  }
  return d;
}

namespace {

Eigen::VectorXd mean_vector(const Eigen::VectorXd& beta, const NBDesign& d) {
  return (d.x * beta + d.offset).array().exp();
}

// f(k) = log1p(k mu)/k^2 - mu/(k (1 + k mu)) and f'(k); series near k mu = 0.
void dispersion_tail(double k, double mu, double& f, double& df) {
  const double x = k * mu;
  if (x < 1e-2) {
    f = 0.0;
    df = 0.0;
    double xp = 1.0;  // x^(n-2)
    for (int n = 2; n <= 14; ++n) {
      const double sign = (n % 2 == 0) ? 1.0 : -1.0;
      f += sign * (n - 1.0) / n * xp;
      xp *= x;
    }
    xp = 1.0;  // x^(n-3)
    for (int n = 3; n <= 15; ++n) {
      const double sign = (n % 2 == 0) ? 1.0 : -1.0;
      df += sign * (n - 1.0) * (n - 2.0) / n * xp;
      xp *= x;
    }
    f *= mu * mu;
    df *= mu * mu * mu;
    return;
  }
  const double l = std::log1p(x);
  f = l / (k * k) - mu / (k * (1.0 + x));
  df = -2.0 * l / (k * k * k) + 2.0 * mu / (k * k * (1.0 + x)) + mu * mu / (k * (1.0 + x) * (1.0 + x));
}

double loglik_from_mu(const Eigen::VectorXd& mu, double k, const Eigen::VectorXd& y) {
  double ll = 0.0;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    const double yj = y(j);
    const double m = mu(j);
    const auto count = static_cast<long>(yj);
    double term = 0.0;
    if (k > 0.0) {
      for (long i = 1; i < count; ++i) term += std::log1p(k * static_cast<double>(i));
      term += -yj * std::log1p(k * m) - std::log1p(k * m) / k;
    } else {
      term -= m;
    }
    if (count > 0) term += yj * std::log(m);
    term -= std::lgamma(yj + 1.0);
    ll += term;
  }
  return ll;
}

// d loglik / dk and d^2 loglik / dk^2 at fixed means.
void k_score(const Eigen::VectorXd& mu, double k, const Eigen::VectorXd& y, double& s, double& ds) {
  s = 0.0;
  ds = 0.0;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    const double yj = y(j);
    const double m = mu(j);
    const auto count = static_cast<long>(yj);
    for (long i = 1; i < count; ++i) {
      const double t = static_cast<double>(i) / (1.0 + k * static_cast<double>(i));
      s += t;
      ds -= t * t;
    }
    const double inv = 1.0 / (1.0 + k * m);
    s -= yj * m * inv;
    ds += yj * m * m * inv * inv;
    double f, df;
    dispersion_tail(k, m, f, df);
    s += f;
    ds += df;
  }
}

// Newton iterations on beta at fixed k with step-halving.
Eigen::VectorXd fit_beta(Eigen::VectorXd beta, double k, const NBDesign& d, double& ll) {
  Eigen::VectorXd mu = mean_vector(beta, d);
  ll = loglik_from_mu(mu, k, d.y);
  for (int it = 0; it < 100; ++it) {
    const Eigen::ArrayXd denom = 1.0 + k * mu.array();
    const Eigen::VectorXd resid = ((d.y.array() - mu.array()) / denom).matrix();
    const Eigen::VectorXd grad = d.x.transpose() * resid;
    const Eigen::ArrayXd w = mu.array() * (1.0 + k * d.y.array()) / denom.square();
    const Eigen::MatrixXd hess = d.x.transpose() * (d.x.array().colwise() * w).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success) break;
    const Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) break;

    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      const Eigen::VectorXd trial = beta + t * step;
      const Eigen::VectorXd mu_trial = mean_vector(trial, d);
      const double ll_trial = loglik_from_mu(mu_trial, k, d.y);
      if (std::isfinite(ll_trial) && ll_trial >= ll) {
        beta = trial;
        mu = mu_trial;
        ll = ll_trial;
        accepted = true;
        break;
      }
    }
    if (!accepted || (t * step).lpNorm<Eigen::Infinity>() < 1e-11) break;
  }
  return beta;
}

struct KSolve {
  double k = 0.0;
  bool boundary = false;
  bool failed = false;
};

// Maximizes the likelihood in k at fixed beta.
KSolve fit_k(const Eigen::VectorXd& beta, double k0, const NBDesign& d) {
  const Eigen::VectorXd mu = mean_vector(beta, d);
  KSolve out;
  const double s_zero = 0.5 * ((d.y - mu).array().square() - d.y.array()).sum();
  if (s_zero <= 0.0) {
    out.boundary = true;
    return out;
  }
  double lo = 0.0;
  double hi = std::max(2.0 * k0, 1e-2);
  double s, ds;
  k_score(mu, hi, d.y, s, ds);
  while (s > 0.0) {
    lo = hi;
    hi *= 4.0;
    if (hi > 1e8) {
      out.k = lo;
      out.failed = true;
      return out;
    }
    k_score(mu, hi, d.y, s, ds);
  }
  double k = (k0 > lo && k0 < hi) ? k0 : 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    k_score(mu, k, d.y, s, ds);
    if (std::fabs(s) < 1e-11) break;
    if (s > 0.0) lo = k; else hi = k;
    double next = k - s / ds;
    if (!(ds < 0.0) || !(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::fabs(next - k) <= 1e-15 * (1.0 + k)) {
      k = next;
      break;
    }
    k = next;
  }
  out.k = k;
  return out;
}

bool covariances(NBFit& fit) {
  const NBDesign& d = fit.design;
  const double k = fit.k;
  const Eigen::VectorXd mu = mean_vector(fit.beta, d);
  const Eigen::ArrayXd denom = 1.0 + k * mu.array();
  const Eigen::ArrayXd w_obs = mu.array() * (1.0 + k * d.y.array()) / denom.square();
  const Eigen::ArrayXd score = (d.y.array() - mu.array()) / denom;
  const Eigen::MatrixXd a = d.x.transpose() * (d.x.array().colwise() * w_obs).matrix();
  const Eigen::MatrixXd b = d.x.transpose() * (d.x.array().colwise() * score.square()).matrix();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
  const double min_ev = eig.eigenvalues().minCoeff();
  const double max_ev = eig.eigenvalues().maxCoeff();
  fit.diagnostics.condition_number = min_ev > 0.0 ? max_ev / min_ev : std::numeric_limits<double>::infinity();
  if (!(min_ev > 0.0) || fit.diagnostics.condition_number > 1e14) {
    return false;
  }
  const Eigen::Index p = a.rows();
  const Eigen::MatrixXd a_inv = a.llt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.model_cov = 0.5 * (a_inv + a_inv.transpose());
  Eigen::MatrixXd sandwich = a_inv * b * a_inv;
  fit.sandwich_cov = 0.5 * (sandwich + sandwich.transpose());

  const auto n = static_cast<double>(d.y.size());
  const double chi2 = ((d.y.array() - mu.array()).square() / (mu.array() * denom)).sum();
  fit.phi = n > static_cast<double>(p) ? chi2 / (n - static_cast<double>(p)) : 1.0;
  fit.pearson_scaled_cov =
      (fit.scaling == PearsonScaling::Sandwich ? fit.sandwich_cov : fit.model_cov) * fit.phi;
  return true;
}

}  // namespace

double nb_loglik(const Eigen::VectorXd& beta, double k, const NBDesign& design) {
  return loglik_from_mu(mean_vector(beta, design), k, design.y);
}

Eigen::VectorXd nb_score(const Eigen::VectorXd& beta, double k, const NBDesign& design) {
  const Eigen::VectorXd mu = mean_vector(beta, design);
  const Eigen::Index p = design.x.cols();
  Eigen::VectorXd g(p + 1);
  g.head(p) = design.x.transpose() * ((design.y.array() - mu.array()) / (1.0 + k * mu.array())).matrix();
  double s, ds;
  k_score(mu, k, design.y, s, ds);
  g(p) = s;
  return g;
}

NBFit fit_nb(const Dataset& data, bool adjusted, const std::vector<std::size_t>& covariates,
             const NBOptions& options) {
  NBFit fit;
  fit.design = build_nb_design(data, adjusted, covariates);
  fit.offset = fit.design.offset;
  fit.adjusted = adjusted;
  fit.scaling = options.scaling;
  const NBDesign& d = fit.design;
  const int arms = d.arm_count;
  const Eigen::Index p = d.x.cols();

  std::string empty_arms;
  for (int a = 0; a < arms; ++a) {
    if (data.arm_events(a) == 0) empty_arms += (empty_arms.empty() ? "" : ", ") + std::to_string(a);
  }
  const int max_outer = empty_arms.empty() ? options.max_outer : std::min(options.max_outer, 5);

  fit.beta = Eigen::VectorXd::Zero(p);
  for (int a = 0; a < arms; ++a) {
    const double events = std::max(static_cast<double>(data.arm_events(a)), 0.5);
    fit.beta(a) = std::log(events / data.arm_exposure(a));
  }

  double ll = 0.0;
  double k = options.fixed_k.value_or(0.0);
  bool boundary = false;
  bool k_failed = false;
  if (!options.fixed_k) {
    fit.beta = fit_beta(fit.beta, 0.0, d, ll);
    const Eigen::VectorXd mu = mean_vector(fit.beta, d);
    const double excess = ((d.y - mu).array().square() - mu.array()).sum();
    k = std::max(excess / mu.array().square().sum(), 0.0);
  }

  double ll_prev = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_beta = fit.beta;
  double best_k = k;
  double best_ll = -std::numeric_limits<double>::infinity();
  double gnorm = std::numeric_limits<double>::infinity();
  int it = 0;
  for (it = 1; it <= max_outer; ++it) {
    fit.beta = fit_beta(fit.beta, k, d, ll);
    if (!options.fixed_k) {
      const KSolve ks = fit_k(fit.beta, k, d);
      const double ll_k = nb_loglik(fit.beta, ks.k, d);
      if (ll_k >= ll - 1e-12 * std::max(1.0, std::fabs(ll)) || ks.boundary) {
        k = ks.k;
        ll = ll_k;
      }
      boundary = ks.boundary;
      k_failed = ks.failed;
    }
    fit.loglik_path.push_back(ll);
    if (!std::isfinite(ll) || !fit.beta.allFinite()) break;
    if (ll > best_ll) {
      best_ll = ll;
      best_beta = fit.beta;
      best_k = k;
    }

    const Eigen::VectorXd g = nb_score(fit.beta, k, d);
    const bool k_free = !options.fixed_k && !boundary;
    gnorm = k_free ? g.norm() : g.head(p).norm();
    if (std::fabs(ll - ll_prev) < options.loglik_tol && gnorm < options.score_tol) {
      fit.converged = true;
      break;
    }
    ll_prev = ll;
  }

  fit.beta = best_beta;
  fit.k = best_k;
  fit.loglik = best_ll;
  fit.iterations = std::min(it, max_outer);
  fit.diagnostics.path_length = static_cast<int>(fit.loglik_path.size());
  fit.diagnostics.gradient_norm = gnorm;

  if (!empty_arms.empty()) {
    fit.converged = false;
    fit.diagnostics.message = "no events in arm(s) " + empty_arms + "; the MLE does not exist";
  } else if (k_failed) {
    fit.converged = false;
    fit.diagnostics.message = "dispersion diverges; likelihood keeps increasing in k";
  } else if (fit.converged && fit.beta.head(arms).cwiseAbs().maxCoeff() > 40.0) {
    fit.converged = false;
    fit.diagnostics.message = "arm coefficient diverging";
  } else if (!fit.converged) {
    fit.diagnostics.message = "outer iterations exhausted";
  }

  if (fit.converged) {
    fit.status = boundary ? FitStatus::BoundaryDispersion : FitStatus::Converged;
    if (boundary) fit.diagnostics.message = "dispersion at boundary k = 0; Poisson fit reported";
  } else {
    fit.status = FitStatus::NonConvergence;
  }

  if (!covariances(fit)) {
    if (fit.status != FitStatus::NonConvergence) {
      fit.status = FitStatus::NonConvergence;
      fit.converged = false;
      fit.diagnostics.message = "information matrix is singular";
    }
  }
  return fit;
}

Eigen::MatrixXd robust_covariance(const NBFit& fit) {
  NBFit copy = fit;
  if (!covariances(copy)) {
    throw Error(ErrorCode::SingularInformation,
                "observed information has condition number " + std::to_string(copy.diagnostics.condition_number));
  }
  return copy.pearson_scaled_cov;
}

namespace {

void require_usable(const NBFit& fit) {
  if (fit.status == FitStatus::NonConvergence) {
    throw Error(ErrorCode::NonConvergence, "negative binomial fit did not converge: " + fit.diagnostics.message);
  }
}

// Predicted counts with every subject assigned to `arm`.
Eigen::VectorXd counterfactual_counts(const NBFit& fit, int arm) {
  const NBDesign& d = fit.design;
  const int arms = d.arm_count;
  const Eigen::Index q = d.x.cols() - arms;
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(d.y.size(), fit.beta(arm)) + d.offset;
  if (q > 0) eta += d.x.rightCols(q) * fit.beta.tail(q);
  return eta.array().exp();
}

}  // namespace

MarginalRates marginal_rates_gcomp(const NBFit& fit, const Dataset& data) {
  require_usable(fit);
  const NBDesign& d = fit.design;
  const int arms = d.arm_count;
  const Eigen::Index p = d.x.cols();
  const Eigen::Index q = p - arms;
  const double total_exposure = data.total_exposure();

  MarginalRates out;
  out.estimator_kind = MethodTag::NbGcomp;
  out.rates.resize(arms);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(arms, p);
  for (int a = 0; a < arms; ++a) {
    const Eigen::VectorXd pred = counterfactual_counts(fit, a);
    out.rates(a) = pred.sum() / total_exposure;
    grad(a, a) = out.rates(a);
    if (q > 0) grad.row(a).tail(q) = (d.x.rightCols(q).transpose() * pred).transpose() / total_exposure;
  }
  out.cov = grad * fit.pearson_scaled_cov * grad.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

MarginalRates marginal_rates_aipw(const NBFit& fit, const Dataset& data) {
  require_usable(fit);
  const NBDesign& d = fit.design;
  const int arms = d.arm_count;
  const auto n = static_cast<double>(data.size());
  const double total_exposure = data.total_exposure();
  const double mean_exposure = total_exposure / n;

  MarginalRates out;
  out.estimator_kind = MethodTag::NbAipw;
  out.rates.resize(arms);
  Eigen::MatrixXd influence(d.y.size(), arms);
  for (int a = 0; a < arms; ++a) {
    if (data.arm_size(a) == 0) throw Error(ErrorCode::EmptyArm, "arm " + std::to_string(a) + " is empty");
    const double inv_pi = n / static_cast<double>(data.arm_size(a));
    Eigen::VectorXd psi = counterfactual_counts(fit, a);
    for (std::size_t j = data.arm_begin(a); j < data.arm_end(a); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      psi(jj) += inv_pi * (d.y(jj) - psi(jj));
    }
    out.rates(a) = psi.sum() / total_exposure;
    influence.col(a) = (psi - out.rates(a) * d.offset.array().exp().matrix()) / mean_exposure;
  }
  out.cov = influence.transpose() * influence / (n * n);
  return out;
}

RateRatioResult nb_rate_ratio(const MarginalRates& marg, int i, int k, double alpha, Alternative alt) {
  if (i == k) {
    RateRatioResult rr;
    rr.numerator_arm = i;
    rr.denominator_arm = k;
    rr.alpha = alpha;
    return rr;
  }
  RateEstimate est;
  est.rates = marg.rates;
  est.cov = marg.cov;
  est.method = marg.estimator_kind;
  return rate_ratio(log_rates(est), i, k, alpha, alt);
}

RateRatioResult nb_rate_ratio(const NBFit& fit, int i, int k, double alpha, Alternative alt) {
  require_usable(fit);
  if (i == k) {
    RateRatioResult rr;
    rr.numerator_arm = i;
    rr.denominator_arm = k;
    rr.alpha = alpha;
    return rr;
  }
  const int arms = fit.design.arm_count;
  LogRateEstimate est;
  est.theta = fit.beta.head(arms);
  est.cov_theta = fit.pearson_scaled_cov.topLeftCorner(arms, arms);
  return rate_ratio(est, i, k, alpha, alt);
}

}  // namespace emprate

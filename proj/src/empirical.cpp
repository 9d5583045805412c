#include "emprate/empirical.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "emprate/error.hpp"

namespace emprate {

const char* to_string(MethodTag tag) {
  switch (tag) {
    case MethodTag::Aggregated: return "aggregated";
    case MethodTag::Unadjusted: return "unadjusted";
    case MethodTag::Ancova: return "ancova";
    case MethodTag::Anhecova: return "anhecova";
    case MethodTag::NbGcomp: return "nb_gcomp";
    case MethodTag::NbAipw: return "nb_aipw";
  }
  return "?";
}

const char* to_string(Adjustment adj) {
  switch (adj) {
    case Adjustment::None: return "none";
    case Adjustment::Ancova: return "ancova";
    case Adjustment::Anhecova: return "anhecova";
  }
  return "?";
}

Adjustment parse_adjustment(const std::string& name) {
  if (name == "none") return Adjustment::None;
  if (name == "ancova") return Adjustment::Ancova;
  if (name == "anhecova") return Adjustment::Anhecova;
  throw Error(ErrorCode::InvalidArgument, "unknown adjustment '" + name + "'");
}

void validate(const InferenceConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  }
}

WVector transform_w(const Dataset& data) {
  WVector w;
  w.values.resize(static_cast<Eigen::Index>(data.size()));
  w.arm_mean_exposures.resize(data.arm_count());
  for (int a = 0; a < data.arm_count(); ++a) {
    const double dbar = data.arm_mean_exposure(a);
    w.arm_mean_exposures(a) = dbar;
    for (std::size_t j = data.arm_begin(a); j < data.arm_end(a); ++j) {
      w.values(static_cast<Eigen::Index>(j)) = static_cast<double>(data.records()[j].count) / dbar;
    }
  }
  return w;
}

namespace {

std::vector<int> zero_event_arms(const Dataset& data) {
  std::vector<int> zeros;
  for (int a = 0; a < data.arm_count(); ++a) {
    if (data.arm_events(a) == 0) zeros.push_back(a);
  }
  return zeros;
}

// Selected covariate columns (raw, uncentered), n x q.
Eigen::MatrixXd covariate_matrix(const Dataset& data, const std::vector<std::size_t>& selection) {
  std::vector<std::size_t> cols = selection;
  if (cols.empty()) {
    for (std::size_t c = 0; c < data.covariate_count(); ++c) cols.push_back(c);
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c] >= data.covariate_count()) {
      throw Error(ErrorCode::InvalidArgument, "covariate index " + std::to_string(cols[c]) + " out of range");
    }
    for (std::size_t j = 0; j < data.size(); ++j) {
      x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = data.records()[j].covariates[cols[c]];
    }
  }
  return x;
}

std::vector<std::string> covariate_labels(const Dataset& data, const std::vector<std::size_t>& selection) {
  std::vector<std::string> names;
  if (selection.empty()) return data.covariate_names();
  for (std::size_t c : selection) names.push_back(data.covariate_names().at(c));
  return names;
}

// Stratum label per record mapped to 0..K-1 in sorted label order.
std::vector<int> stratum_index(const Dataset& data, std::vector<std::string>* labels) {
  std::map<std::string, int> levels;
  for (const auto& r : data.records()) levels.emplace(*r.stratum, 0);
  int next = 0;
  for (auto& [label, idx] : levels) {
    idx = next++;
    if (labels) labels->push_back(label);
  }
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& r : data.records()) out.push_back(levels.at(*r.stratum));
  return out;
}

}  // namespace

RateEstimate aggregated_rates(const Dataset& data) {
  const int arms = data.arm_count();
  const WVector w = transform_w(data);
  RateEstimate est;
  est.method = MethodTag::Aggregated;
  est.rates.resize(arms);
  est.cov = Eigen::MatrixXd::Zero(arms, arms);
  for (int a = 0; a < arms; ++a) {
    est.rates(a) = static_cast<double>(data.arm_events(a)) / data.arm_exposure(a);
    const auto begin = static_cast<Eigen::Index>(data.arm_begin(a));
    const auto n = static_cast<Eigen::Index>(data.arm_size(a));
    const auto seg = w.values.segment(begin, n);
    const double mean = seg.mean();
    const double s2 = (seg.array() - mean).square().sum() / static_cast<double>(n - 1);
    est.cov(a, a) = s2 / static_cast<double>(n);
  }
  est.zero_event_arms = zero_event_arms(data);
  return est;
}

RateEstimate estimate_rates(const Dataset& data, const InferenceConfig& cfg) {
  validate(cfg);
  Adjustment adjustment = cfg.adjustment;
  if (adjustment == Adjustment::Anhecova && !data.has_strata()) adjustment = Adjustment::Ancova;

  const int arms = data.arm_count();
  const auto n = static_cast<Eigen::Index>(data.size());
  const WVector w = transform_w(data);

  std::size_t smallest = data.arm_size(0);
  for (int a = 1; a < arms; ++a) smallest = std::min(smallest, data.arm_size(a));
  const HcFlavor flavor = cfg.hc_flavor.value_or(default_hc_flavor(smallest));

  // Covariates: user-selected, plus stratum indicators under ANHECOVA.
  Eigen::MatrixXd cov_x(n, 0);
  std::vector<std::string> cov_names;
  std::vector<int> strata;
  int stratum_levels = 0;
  if (adjustment != Adjustment::None) {
    cov_x = covariate_matrix(data, cfg.covariates);
    cov_names = covariate_labels(data, cfg.covariates);
    if (adjustment == Adjustment::Anhecova) {
      std::vector<std::string> labels;
      strata = stratum_index(data, &labels);
      stratum_levels = static_cast<int>(labels.size());
      const Eigen::Index base = cov_x.cols();
      cov_x.conservativeResize(n, base + stratum_levels - 1);
      for (int s = 1; s < stratum_levels; ++s) {
        for (Eigen::Index j = 0; j < n; ++j) cov_x(j, base + s - 1) = strata[j] == s ? 1.0 : 0.0;
        cov_names.push_back("stratum[" + labels[s] + "]");
      }
    }
    if (cov_x.cols() == 0) {
      throw Error(ErrorCode::InvalidArgument, std::string(to_string(adjustment)) + " requires covariates");
    }
  }
  const Eigen::Index q = cov_x.cols();
  const Eigen::RowVectorXd grand_mean = q > 0 ? Eigen::RowVectorXd(cov_x.colwise().mean())
                                              : Eigen::RowVectorXd(0);
  const Eigen::MatrixXd centered = cov_x.rowwise() - grand_mean;

  std::vector<int> arm_of(static_cast<std::size_t>(n));
  for (int a = 0; a < arms; ++a) {
    for (std::size_t j = data.arm_begin(a); j < data.arm_end(a); ++j) arm_of[j] = a;
  }

  DesignMatrix design;
  const Eigen::Index p = adjustment == Adjustment::Anhecova ? arms * (1 + q)
                         : adjustment == Adjustment::Ancova ? arms + q
                                                            : arms;
  design.x = Eigen::MatrixXd::Zero(n, p);
  for (int a = 0; a < arms; ++a) design.column_names.push_back("arm[" + std::to_string(a) + "]");
  for (Eigen::Index j = 0; j < n; ++j) design.x(j, arm_of[j]) = 1.0;
  if (adjustment == Adjustment::Ancova) {
    design.x.rightCols(q) = centered;
    for (const auto& name : cov_names) design.column_names.push_back(name);
  } else if (adjustment == Adjustment::Anhecova) {
    for (int a = 0; a < arms; ++a) {
      for (Eigen::Index c = 0; c < q; ++c) {
        design.column_names.push_back("arm[" + std::to_string(a) + "]:" + cov_names[c]);
      }
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      design.x.block(j, arms + arm_of[j] * q, 1, q) = centered.row(j);
    }
  }

  const OLSFit fit = fit_ols(design, w.values);
  const Eigen::MatrixXd hc = hc_covariance(fit, flavor);

  RateEstimate est;
  est.method = adjustment == Adjustment::None     ? MethodTag::Unadjusted
               : adjustment == Adjustment::Ancova ? MethodTag::Ancova
                                                  : MethodTag::Anhecova;
  est.rates = fit.coef.head(arms);
  est.cov = hc.topLeftCorner(arms, arms);
  est.zero_event_arms = zero_event_arms(data);

  if (q > 0) {
    const double nd = static_cast<double>(n);
    Eigen::MatrixXd slopes(q, arms);
    for (int a = 0; a < arms; ++a) {
      slopes.col(a) = adjustment == Adjustment::Ancova ? fit.coef.tail(q) : fit.coef.segment(arms + a * q, q);
    }
    const Eigen::MatrixXd sx = centered.transpose() * centered / nd;
    Eigen::MatrixXd resid_cov = Eigen::MatrixXd::Zero(q, arms);
    for (int a = 0; a < arms; ++a) {
      const auto begin = static_cast<Eigen::Index>(data.arm_begin(a));
      const auto na = static_cast<Eigen::Index>(data.arm_size(a));
      const Eigen::MatrixXd xa = centered.middleRows(begin, na);
      const Eigen::RowVectorXd xa_mean = xa.colwise().mean();
      const Eigen::VectorXd ea = fit.residuals.segment(begin, na);
      resid_cov.col(a) = (xa.rowwise() - xa_mean).transpose() * (ea.array() - ea.mean()).matrix() /
                         static_cast<double>(na);
    }
    const Eigen::MatrixXd cross = slopes.transpose() * resid_cov;
    est.cov += (slopes.transpose() * sx * slopes + cross + cross.transpose()) / nd;
  }

  if (adjustment == Adjustment::Anhecova) {
    const double nd = static_cast<double>(n);
    Eigen::VectorXd pi(arms);
    for (int a = 0; a < arms; ++a) pi(a) = static_cast<double>(data.arm_size(a)) / nd;
    const Eigen::MatrixXd omega = Eigen::MatrixXd(pi.asDiagonal()) - pi * pi.transpose();

    Eigen::MatrixXd resid_sum = Eigen::MatrixXd::Zero(stratum_levels, arms);
    Eigen::MatrixXd cell_n = Eigen::MatrixXd::Zero(stratum_levels, arms);
    Eigen::VectorXd stratum_n = Eigen::VectorXd::Zero(stratum_levels);
    for (Eigen::Index j = 0; j < n; ++j) {
      resid_sum(strata[j], arm_of[j]) += fit.residuals(j);
      cell_n(strata[j], arm_of[j]) += 1.0;
      stratum_n(strata[j]) += 1.0;
    }
    Eigen::MatrixXd correction = Eigen::MatrixXd::Zero(arms, arms);
    for (int s = 0; s < stratum_levels; ++s) {
      Eigen::VectorXd r(arms);
      for (int a = 0; a < arms; ++a) {
        r(a) = cell_n(s, a) > 0 ? resid_sum(s, a) / cell_n(s, a) / pi(a) : 0.0;
      }
      correction += (stratum_n(s) / nd) * (r.asDiagonal() * omega * r.asDiagonal());
    }
    est.cov -= correction / nd;
  }

  est.cov = 0.5 * (est.cov + est.cov.transpose()).eval();
  return est;
}

LogRateEstimate log_rates(const RateEstimate& est) {
  const Eigen::Index arms = est.rates.size();
  for (Eigen::Index a = 0; a < arms; ++a) {
    const double r = est.rates(a);
    const bool no_events = std::find(est.zero_event_arms.begin(), est.zero_event_arms.end(),
                                     static_cast<int>(a)) != est.zero_event_arms.end();
    if (no_events) {
      throw Error(ErrorCode::ZeroEventsArm, "arm " + std::to_string(a) + " has no events; log rate undefined");
    }
    if (r > 0.0 && std::isfinite(r)) continue;
    throw Error(ErrorCode::NonPositiveRate,
                "arm " + std::to_string(a) + " has estimated rate " + std::to_string(r));
  }
  LogRateEstimate out;
  out.theta = est.rates.array().log();
  const Eigen::VectorXd inv = est.rates.cwiseInverse();
  out.cov_theta = inv.asDiagonal() * est.cov * inv.asDiagonal();
  return out;
}

RateRatioResult rate_ratio(const LogRateEstimate& est, int i, int k, double alpha, Alternative alt) {
  const int arms = static_cast<int>(est.theta.size());
  if (i < 0 || k < 0 || i >= arms || k >= arms) {
    throw Error(ErrorCode::InvalidArgument, "arm index out of range");
  }
  if (i == k) throw Error(ErrorCode::InvalidArgument, "rate ratio needs two distinct arms");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");

  const double se2 = est.cov_theta(i, i) + est.cov_theta(k, k) - 2.0 * est.cov_theta(i, k);
  const double scale = std::fabs(est.cov_theta(i, i)) + std::fabs(est.cov_theta(k, k));
  if (!(se2 > 1e-12 * scale) || !(se2 > 1e-20) || !std::isfinite(se2)) {
    throw Error(ErrorCode::DegenerateVariance,
                "variance of log rate ratio is " + std::to_string(se2));
  }
  RateRatioResult rr;
  rr.numerator_arm = i;
  rr.denominator_arm = k;
  rr.alpha = alpha;
  rr.log_lambda = est.theta(i) - est.theta(k);
  rr.lambda_hat = std::exp(rr.log_lambda);
  rr.se_log = std::sqrt(se2);
  rr.z = rr.log_lambda / rr.se_log;
  rr.p = normal_p_value(rr.z, alt);
  const double crit = normal_quantile(1.0 - alpha / 2.0);
  rr.ci_low = rr.lambda_hat * std::exp(-crit * rr.se_log);
  rr.ci_high = rr.lambda_hat * std::exp(crit * rr.se_log);
  return rr;
}

NaiveRates naive_subject_rate(const Dataset& data) {
  NaiveRates out;
  out.rates.resize(data.arm_count());
  for (int a = 0; a < data.arm_count(); ++a) {
    double sum = 0.0;
    for (std::size_t j = data.arm_begin(a); j < data.arm_end(a); ++j) {
      const auto& r = data.records()[j];
      sum += static_cast<double>(r.count) / r.exposure;
    }
    out.rates(a) = sum / static_cast<double>(data.arm_size(a));
  }
  out.note = "per-subject rate average; unstable under unequal follow-up, not recommended for inference";
  return out;
}

}  // namespace emprate

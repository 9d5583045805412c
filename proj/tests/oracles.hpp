#pragma once

// Reference computations written independently of the library: brute-force
// sums, explicit matrix inverses and plain std:: samplers.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

inline double nb_log_pmf(std::int64_t y, double mu, double k) {
  const double yy = static_cast<double>(y);
  if (k == 0.0) return yy * std::log(mu) - mu - std::lgamma(yy + 1.0);
  // Gamma(y + 1/k) / Gamma(1/k) k^y expanded as a finite product.
  double ll = 0.0;
  for (std::int64_t i = 0; i < y; ++i) ll += std::log1p(static_cast<double>(i) * k);
  return ll + yy * std::log(mu) - (yy + 1.0 / k) * std::log1p(k * mu) - std::lgamma(yy + 1.0);
}

inline double poisson_log_pmf(std::int64_t y, double mu) {
  const double yy = static_cast<double>(y);
  return yy * std::log(mu) - mu - std::lgamma(yy + 1.0);
}

// Smallest y with sum_{m<=y} pmf(m) >= p.
inline std::int64_t nb_quantile_sum(double p, double mu, double k) {
  double cdf = 0.0;
  for (std::int64_t y = 0;; ++y) {
    cdf += std::exp(nb_log_pmf(y, mu, k));
    if (cdf >= p) return y;
  }
}

// Same search with the CDF accumulated in log space.
inline std::int64_t poisson_quantile_logsum(double p, double mu) {
  double log_cdf = -INFINITY;
  const double log_p = std::log(p);
  for (std::int64_t y = 0;; ++y) {
    const double lp = poisson_log_pmf(y, mu);
    const double m = std::max(log_cdf, lp);
    log_cdf = m + std::log(std::exp(log_cdf - m) + std::exp(lp - m));
    if (log_cdf >= log_p) return y;
  }
}

inline Eigen::VectorXd ols_normal_equations(const Eigen::MatrixXd& x, const Eigen::VectorXd& w) {
  const Eigen::MatrixXd xtx = x.transpose() * x;
  return xtx.inverse() * (x.transpose() * w);
}

// (X'X)^-1 (sum_j e_j^2 x_j x_j') (X'X)^-1 assembled row by row.
inline Eigen::MatrixXd hc0_explicit(const Eigen::MatrixXd& x, const Eigen::VectorXd& e) {
  const Eigen::MatrixXd inv = (x.transpose() * x).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const Eigen::VectorXd xj = x.row(j).transpose();
    meat += e(j) * e(j) * xj * xj.transpose();
  }
  return inv * meat * inv;
}

inline Eigen::MatrixXd hc3_explicit(const Eigen::MatrixXd& x, const Eigen::VectorXd& e) {
  const Eigen::MatrixXd inv = (x.transpose() * x).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const Eigen::VectorXd xj = x.row(j).transpose();
    const double h = xj.dot(inv * xj);
    meat += e(j) * e(j) / ((1.0 - h) * (1.0 - h)) * xj * xj.transpose();
  }
  return inv * meat * inv;
}

inline double nb_loglik_sum(const Eigen::VectorXd& beta, double k, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& offset, const Eigen::VectorXd& y) {
  double ll = 0.0;
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const double mu = std::exp(x.row(j).dot(beta) + offset(j));
    ll += nb_log_pmf(static_cast<std::int64_t>(y(j)), mu, k);
  }
  return ll;
}

// Poisson GLM by plain Newton steps with an explicit inverse.
inline Eigen::VectorXd poisson_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& offset, const Eigen::VectorXd& y) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(x.cols());
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(x.cols(), x.cols());
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      const double mu = std::exp(x.row(j).dot(beta) + offset(j));
      grad += (y(j) - mu) * x.row(j).transpose();
      info += mu * x.row(j).transpose() * x.row(j);
    }
    Eigen::VectorXd step = info.inverse() * grad;
    double scale = 1.0;
    while (step.cwiseAbs().maxCoeff() * scale > 2.0) scale *= 0.5;
    beta += scale * step;
    if (step.norm() * scale < 1e-14) break;
  }
  return beta;
}

inline Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& at, double h) {
  Eigen::VectorXd g(at.size());
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    Eigen::VectorXd a = at, b = at;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

// Gamma-Poisson mixture draw for NB2(mu, k).
class NbSampler {
 public:
  explicit NbSampler(std::uint64_t seed) : engine_(seed) {}
  std::int64_t operator()(double mu, double k) {
    double lambda = mu;
    if (k > 0.0) lambda = std::gamma_distribution<double>(1.0 / k, k * mu)(engine_);
    return std::poisson_distribution<std::int64_t>(lambda)(engine_);
  }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// CDF of the 50/50 mixture of U(0.6, 1.2) and U(0.8, 1.4).
inline double exposure_mixture_cdf(double d) {
  auto u = [](double x, double lo, double hi) { return x <= lo ? 0.0 : x >= hi ? 1.0 : (x - lo) / (hi - lo); };
  return 0.5 * u(d, 0.6, 1.2) + 0.5 * u(d, 0.8, 1.4);
}

}  // namespace oracle

#include "emprate/simgen.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <cstdio>

#include "emprate/error.hpp"
#include "emprate/stats.hpp"

namespace emprate {

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32)};
  engine_.seed(seq);
}

double RngStream::uniform() {
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal() { return normal_quantile(uniform()); }

std::int64_t RngStream::poisson(double mean) {
  const double u = uniform();
  std::int64_t y = 0;
  double pmf = std::exp(-mean);
  double cdf = pmf;
  while (u > cdf) {
    ++y;
    pmf *= mean / static_cast<double>(y);
    const double next = cdf + pmf;
    if (next == cdf) break;
    cdf = next;
  }
  return y;
}

double ExposureMixture::draw(RngStream& rng) const {
  const bool first = rng.uniform() < p_first;
  return first ? rng.uniform(lo1, hi1) : rng.uniform(lo2, hi2);
}

double ExposureMixture::cdf(double d) const {
  auto unif = [](double x, double lo, double hi) {
    if (hi <= lo) return x >= lo ? 1.0 : 0.0;
    return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
  };
  return p_first * unif(d, lo1, hi1) + (1.0 - p_first) * unif(d, lo2, hi2);
}

double ExposureMixture::mean() const {
  return p_first * 0.5 * (lo1 + hi1) + (1.0 - p_first) * 0.5 * (lo2 + hi2);
}

std::vector<double> gen_exposure(std::size_t n, RngStream& rng, const ExposureMixture& mix) {
  std::vector<double> d(n);
  for (auto& v : d) v = mix.draw(rng);
  return d;
}

namespace {

// Bisection on the regularized-incomplete-function CDF for means where the
// pmf recursion would start from an underflowed P(Y = 0).
std::int64_t quantile_by_search(double p, double mean, double k) {
  auto cdf = [&](std::int64_t y) {
    const double yd = static_cast<double>(y);
    if (k == 0.0) return boost::math::gamma_q(yd + 1.0, mean);
    const double size = 1.0 / k;
    return boost::math::ibeta(size, yd + 1.0, size / (size + mean));
  };
  std::int64_t lo = 0, hi = static_cast<std::int64_t>(mean) + 1;
  while (cdf(hi) < p) hi *= 2;
  while (lo < hi) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (cdf(mid) >= p) hi = mid; else lo = mid + 1;
  }
  return lo;
}

}  // namespace

std::int64_t nb_quantile(double p, double mean, double k) {
  if (!(p >= 0.0 && p < 1.0) || !(mean > 0.0) || !(k >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "nb_quantile needs p in [0,1), mean > 0, k >= 0");
  }
  const double log_p0 = k > 0.0 ? -std::log1p(k * mean) / k : -mean;
  if (log_p0 < -700.0) return quantile_by_search(p, mean, k);

  double pmf = std::exp(log_p0);
  double cdf = pmf;
  const double size = k > 0.0 ? 1.0 / k : 0.0;
  const double ratio = k > 0.0 ? k * mean / (1.0 + k * mean) : 0.0;
  std::int64_t y = 0;
  while (cdf < p) {
    ++y;
    const double yd = static_cast<double>(y);
    pmf *= k > 0.0 ? (yd - 1.0 + size) / yd * ratio : mean / yd;
    const double next = cdf + pmf;
    if (next == cdf && yd > mean) break;
    cdf = next;
  }
  return y;
}

double ScenarioSpec::true_rate_ratio() const {
  return kind == StudyKind::CorrelatedNB ? r1 / r0 : std::exp(beta_trt);
}

void ScenarioSpec::validate() const {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::InvalidArgument, "scenario " + case_id + ": " + what);
  };
  if (n_per_arm < 2) fail("n per arm must be at least 2");
  if (!(k0 >= 0.0 && k1 >= 0.0)) fail("dispersions must be non-negative");
  if (!(exposure.lo1 > 0.0 && exposure.lo1 <= exposure.hi1 && exposure.lo2 > 0.0 && exposure.lo2 <= exposure.hi2 &&
        exposure.p_first >= 0.0 && exposure.p_first <= 1.0)) {
    fail("invalid exposure mixture");
  }
  if (kind == StudyKind::CorrelatedNB) {
    if (!(r0 > 0.0 && r1 > 0.0 && r_x > 0.0)) fail("rates must be positive");
    if (!(k_x >= 0.0)) fail("baseline dispersion must be non-negative");
    if (!(rho >= 0.0 && rho <= 0.95)) fail("rho must lie in [0, 0.95]");
  } else {
    if (!(x_mean > 0.0)) fail("baseline Poisson mean must be positive");
    if (!(pi >= 0.0 && pi < 1.0)) fail("pi must lie in [0, 1)");
    if (!std::isfinite(beta0 + beta_trt + beta1 + beta2)) fail("coefficients must be finite");
  }
}

ScenarioSpec scenario(const std::string& case_id, int n_per_arm) {
  ScenarioSpec s;
  s.case_id = case_id;
  s.n_per_arm = n_per_arm;
  if (case_id == "A" || case_id == "B" || case_id == "C") {
    s.kind = StudyKind::CorrelatedNB;
    s.r_x = 0.4;
    s.k_x = 3.75;
    s.r0 = s.r1 = 0.7;
    s.k0 = s.k1 = 2.43;
    if (case_id == "B") {
      s.r0 = s.r1 = 0.5;
      s.k0 = s.k1 = 14.0;
    } else if (case_id == "C") {
      s.r1 = 0.5;
    }
  } else if (case_id == "D" || case_id == "E" || case_id == "F") {
    s.kind = StudyKind::CorrelatedNB;
    s.r_x = 3.7;
    s.k_x = 2.02;
    s.r0 = s.r1 = 5.6;
    s.k0 = s.k1 = 0.62;
    if (case_id == "E") {
      s.k0 = s.k1 = 3.01;
    } else if (case_id == "F") {
      s.r1 = 4.7;
    }
  } else if (case_id == "G" || case_id == "H" || case_id == "I" || case_id == "J") {
    s.kind = StudyKind::ZeroInflatedNB;
    s.x_mean = 1.5;
    s.beta0 = std::log(0.3);
    s.beta1 = std::log(1.5);
    s.beta2 = std::log(2.0);
    s.k0 = s.k1 = 1.0;
    s.pi = (case_id == "G" || case_id == "I") ? 0.6 : 0.3;
    s.beta_trt = (case_id == "I" || case_id == "J") ? std::log(0.7) : 0.0;
  } else {
    throw Error(ErrorCode::UnknownCase, "unknown scenario case '" + case_id + "'");
  }
  s.validate();
  return s;
}

CopulaMargins arm_margins(const ScenarioSpec& spec, int arm) {
  CopulaMargins m;
  m.x_mean = spec.r_x;
  m.x_k = spec.k_x;
  m.y_rate = spec.rate(arm);
  m.y_k = spec.dispersion(arm);
  m.exposure = spec.exposure;
  return m;
}

namespace {

struct CopulaDraws {
  std::vector<double> z1, z2, mean_y;
  std::vector<double> x;
};

CopulaDraws draw_copula_inputs(const CopulaMargins& m, std::size_t pairs, std::uint64_t seed) {
  RngStream rng(seed, 0);
  CopulaDraws draws;
  draws.z1.resize(pairs);
  draws.z2.resize(pairs);
  draws.mean_y.resize(pairs);
  draws.x.resize(pairs);
  for (std::size_t j = 0; j < pairs; ++j) {
    draws.z1[j] = rng.normal();
    draws.z2[j] = rng.normal();
    draws.mean_y[j] = m.y_rate * m.exposure.draw(rng);
  }
  for (std::size_t j = 0; j < pairs; ++j) {
    const double u = std::min(normal_cdf(draws.z1[j]), std::nextafter(1.0, 0.0));
    draws.x[j] = static_cast<double>(nb_quantile(u, m.x_mean, m.x_k));
  }
  return draws;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ma += a[j];
    mb += b[j];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double da = a[j] - ma, db = b[j] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double realized_correlation(const CopulaDraws& draws, const CopulaMargins& m, double latent_rho) {
  const double s = std::sqrt(1.0 - latent_rho * latent_rho);
  std::vector<double> y(draws.z1.size());
  for (std::size_t j = 0; j < y.size(); ++j) {
    const double u = std::min(normal_cdf(latent_rho * draws.z1[j] + s * draws.z2[j]), std::nextafter(1.0, 0.0));
    y[j] = static_cast<double>(nb_quantile(u, draws.mean_y[j], m.y_k));
  }
  return pearson(draws.x, y);
}

}  // namespace

double copula_correlation(const CopulaMargins& margins, double latent_rho, std::size_t pairs, std::uint64_t seed) {
  const CopulaDraws draws = draw_copula_inputs(margins, pairs, seed);
  return realized_correlation(draws, margins, latent_rho);
}

double calibrate_latent_correlation(const CopulaMargins& margins, double target, const CalibrationOptions& options) {
  if (!(target >= 0.0 && target < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "target correlation must lie in [0, 1)");
  }
  if (target == 0.0) return 0.0;
  const CopulaDraws draws = draw_copula_inputs(margins, options.pairs, options.seed);

  double lo = 0.0, hi = 0.999;
  const double at_hi = realized_correlation(draws, margins, hi);
  if (std::fabs(at_hi - target) < options.tol) return hi;
  if (at_hi < target) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "target correlation %.4f exceeds the attainable %.4f for these margins",
                  target, at_hi);
    throw Error(ErrorCode::Unachievable, buf);
  }
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 60; ++it) {
    mid = 0.5 * (lo + hi);
    const double achieved = realized_correlation(draws, margins, mid);
    if (std::fabs(achieved - target) < options.tol) break;
    if (achieved < target) lo = mid; else hi = mid;
  }
  return mid;
}

std::vector<SubjectRecord> gen_correlated_nb(const ScenarioSpec& spec, int arm, double latent_rho, RngStream& rng) {
  const double s = std::sqrt(1.0 - latent_rho * latent_rho);
  const double top = std::nextafter(1.0, 0.0);
  std::vector<SubjectRecord> out(static_cast<std::size_t>(spec.n_per_arm));
  char id[32];
  for (int j = 0; j < spec.n_per_arm; ++j) {
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    const double d = spec.exposure.draw(rng);
    auto& r = out[static_cast<std::size_t>(j)];
    std::snprintf(id, sizeof id, "a%d-%07d", arm, j);
    r.subject_id = id;
    r.arm = arm;
    r.exposure = d;
    const auto x = nb_quantile(std::min(normal_cdf(z1), top), spec.r_x, spec.k_x);
    r.covariates = {static_cast<double>(x)};
    r.count = nb_quantile(std::min(normal_cdf(latent_rho * z1 + s * z2), top), spec.rate(arm) * d,
                          spec.dispersion(arm));
  }
  return out;
}

Dataset gen_correlated_dataset(const ScenarioSpec& spec, const std::vector<double>& latent_rho, RngStream& rng) {
  if (latent_rho.size() != 2) throw Error(ErrorCode::InvalidArgument, "need one latent correlation per arm");
  std::vector<SubjectRecord> records;
  records.reserve(2 * static_cast<std::size_t>(spec.n_per_arm));
  for (int arm = 0; arm < 2; ++arm) {
    auto part = gen_correlated_nb(spec, arm, latent_rho[static_cast<std::size_t>(arm)], rng);
    std::move(part.begin(), part.end(), std::back_inserter(records));
  }
  return validate_dataset(std::move(records), {"X"}, 2);
}

Dataset gen_zinb_dataset(const ScenarioSpec& spec, RngStream& rng) {
  std::vector<SubjectRecord> records;
  records.reserve(2 * static_cast<std::size_t>(spec.n_per_arm));
  char id[32];
  for (int arm = 0; arm < 2; ++arm) {
    for (int j = 0; j < spec.n_per_arm; ++j) {
      const auto x = rng.poisson(spec.x_mean);
      const double z = rng.normal();
      const double d = spec.exposure.draw(rng);
      const bool structural_zero = rng.uniform() < spec.pi;
      const double u = rng.uniform();
      SubjectRecord r;
      std::snprintf(id, sizeof id, "a%d-%07d", arm, j);
      r.subject_id = id;
      r.arm = arm;
      r.exposure = d;
      r.covariates = {static_cast<double>(x), z};
      if (!structural_zero) {
        const double mu =
            std::exp(spec.beta0 + spec.beta_trt * arm + spec.beta1 * static_cast<double>(x) + spec.beta2 * z) * d;
        r.count = nb_quantile(u, mu, spec.dispersion(arm));
      }
      records.push_back(std::move(r));
    }
  }
  return validate_dataset(std::move(records), {"X", "Z"}, 2);
}

}  // namespace emprate

#pragma once

// Simulation data generators: exposure mixture, NB margins coupled through a
// Gaussian copula, and zero-inflated NB outcomes with covariates.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "emprate/domain.hpp"

namespace emprate {

// Reproducible random stream keyed by (seed, stream_id). Each replicate of a
// study owns one stream, so results do not depend on execution order.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  double uniform();  // in (0, 1)
  double uniform(double lo, double hi);
  double normal();
  std::int64_t poisson(double mean);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

// Follow-up drawn from U(lo1, hi1) with probability p_first, else U(lo2, hi2).
struct ExposureMixture {
  double lo1 = 0.6, hi1 = 1.2;
  double lo2 = 0.8, hi2 = 1.4;
  double p_first = 0.5;

  double draw(RngStream& rng) const;
  double cdf(double d) const;
  double mean() const;

  bool operator==(const ExposureMixture&) const = default;
};

std::vector<double> gen_exposure(std::size_t n, RngStream& rng, const ExposureMixture& mix = {});

// Smallest y with CDF(y) >= p under NB2(mean, k); k = 0 is Poisson.
std::int64_t nb_quantile(double p, double mean, double k);

enum class StudyKind { CorrelatedNB, ZeroInflatedNB };

struct ScenarioSpec {
  std::string case_id = "custom";
  StudyKind kind = StudyKind::CorrelatedNB;
  int n_per_arm = 400;
  ExposureMixture exposure;

  // Correlated NB: baseline X ~ NB(r_x, k_x); Y_i ~ NB2(r_i d, k_i).
  double r_x = 0.4;
  double k_x = 3.75;
  double r0 = 0.7;
  double r1 = 0.7;
  double k0 = 2.43;
  double k1 = 2.43;
  double rho = 0.0;  // target corr(X, Y)

  // Zero-inflated NB: X ~ Poisson(x_mean), Z ~ N(0, 1),
  // mu = exp(beta0 + beta_trt i + beta1 X + beta2 Z) d, dispersion k0/k1.
  double x_mean = 1.5;
  double beta0 = 0.0;
  double beta_trt = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double pi = 0.0;  // structural-zero probability

  double rate(int arm) const { return arm == 0 ? r0 : r1; }
  double dispersion(int arm) const { return arm == 0 ? k0 : k1; }
  double true_rate_ratio() const;
  // Throws InvalidArgument on out-of-range parameters.
  void validate() const;

  bool operator==(const ScenarioSpec&) const = default;
};

// Frozen presets for cases A-J. Throws UnknownCase.
ScenarioSpec scenario(const std::string& case_id, int n_per_arm);

// Margins of one arm of the correlated-NB design.
struct CopulaMargins {
  double x_mean = 0.4;
  double x_k = 3.75;
  double y_rate = 0.7;
  double y_k = 2.43;
  ExposureMixture exposure;
};

CopulaMargins arm_margins(const ScenarioSpec& spec, int arm);

struct CalibrationOptions {
  double tol = 0.005;
  std::size_t pairs = 200000;
  std::uint64_t seed = 20240611;
};

// Monte Carlo corr(X, Y) realized by latent correlation `latent_rho`.
double copula_correlation(const CopulaMargins& margins, double latent_rho, std::size_t pairs,
                          std::uint64_t seed);

// Bisection on the latent correlation in [0, 0.999] against a fixed-seed
// Monte Carlo objective. Throws Unachievable when the target exceeds what
// the margins allow.
double calibrate_latent_correlation(const CopulaMargins& margins, double target,
                                    const CalibrationOptions& options = {});

// One subject draw per call, in record order for one arm.
std::vector<SubjectRecord> gen_correlated_nb(const ScenarioSpec& spec, int arm, double latent_rho,
                                             RngStream& rng);

// Both arms of a correlated-NB scenario; latent_rho holds one value per arm.
Dataset gen_correlated_dataset(const ScenarioSpec& spec, const std::vector<double>& latent_rho,
                               RngStream& rng);

// Both arms of a zero-inflated NB scenario, covariates (X, Z).
Dataset gen_zinb_dataset(const ScenarioSpec& spec, RngStream& rng);

}  // namespace emprate

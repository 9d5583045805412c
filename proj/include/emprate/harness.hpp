#pragma once

// Replicated simulation studies comparing NB regression and the empirical
// estimator on generated trials.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emprate/empirical.hpp"
#include "emprate/nbglm.hpp"
#include "emprate/simgen.hpp"

namespace emprate {

enum class Estimator { NB, Empirical };

struct MethodSpec {
  std::string name;
  Estimator estimator = Estimator::Empirical;
  bool adjusted = false;
  std::optional<HcFlavor> hc_flavor;
  PearsonScaling scaling = PearsonScaling::Sandwich;
};

// Unadjusted NB, adjusted NB, unadjusted empirical, adjusted empirical.
std::vector<MethodSpec> paper_methods();

struct MethodOutcome {
  bool ok = false;
  RateRatioResult rr;
  std::optional<FitStatus> nb_status;
  std::string error;
};

struct ReplicateResult {
  std::uint64_t stream_id = 0;
  std::vector<MethodOutcome> outcomes;  // parallel to the method list
  std::vector<double> covariate_outcome_corr;
};

// Calibrated latent correlations stored one file per key under `dir`.
class CalibrationCache {
 public:
  explicit CalibrationCache(std::filesystem::path dir);

  double get_or_compute(const CopulaMargins& margins, double target, const CalibrationOptions& options);
  static std::string key(const CopulaMargins& margins, double target, const CalibrationOptions& options);
  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

struct StudyPlan {
  ScenarioSpec spec;
  std::vector<double> latent_rho;  // per arm, correlated-NB studies only
  double alpha = 0.05;
};

// Resolves the latent correlations once per study.
StudyPlan prepare_study(const ScenarioSpec& spec, double alpha = 0.05, CalibrationCache* cache = nullptr,
                        const CalibrationOptions& options = {});

Dataset generate_dataset(const StudyPlan& plan, RngStream& rng);

// Applies every method to one dataset; errors become per-method diagnostics.
ReplicateResult analyze_replicate(const Dataset& data, const std::vector<MethodSpec>& methods, double alpha);

ReplicateResult run_replicate(const StudyPlan& plan, const std::vector<MethodSpec>& methods, RngStream& rng);

struct MethodSummary {
  std::string name;
  double rejection_rate = 0.0;  // failures count as non-rejections
  double mc_se = 0.0;
  double mean_lambda = 0.0;
  double mean_theta = 0.0;
  double sd_theta = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;  // of the true ratio, among successful replicates
  int successes = 0;
  int nonconvergence = 0;
  int other_failures = 0;
};

struct SimulationSummary {
  ScenarioSpec spec;
  std::vector<double> latent_rho;
  int replicates = 0;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  double true_rate_ratio = 1.0;
  std::vector<MethodSummary> methods;
  std::vector<double> mean_covariate_outcome_corr;
};

// Reduces replicates in stream order.
SimulationSummary summarize(const StudyPlan& plan, const std::vector<MethodSpec>& methods,
                            const std::vector<ReplicateResult>& results, std::uint64_t seed);

// Replicate r uses RngStream(seed, r); `jobs` worker threads. The summary is
// identical for any `jobs`.
SimulationSummary run_study(const StudyPlan& plan, const std::vector<MethodSpec>& methods, int replicates,
                            std::uint64_t seed, int jobs = 1);

nlohmann::json to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimulationSummary& summary);
std::string to_csv(const SimulationSummary& summary);

}  // namespace emprate

#pragma once

// File formats: subject-level CSV, per-stratum meta-analysis CSV and the flat
// key=value simulation config.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emprate/domain.hpp"
#include "emprate/meta.hpp"
#include "emprate/simgen.hpp"

namespace emprate {

struct CsvReadOptions {
  std::vector<std::string> adjust;             // covariate columns
  std::vector<std::string> strata;             // joined with '|' into one label
  std::optional<std::string> control;          // arm label mapped to index 0
  double exposure_divisor = 1.0;
};

// Subject-level input. Arms are indexed by first appearance of their label
// (the control label, when given, is always index 0). When a `period` column
// is present the file is split into one dataset per period, in order of
// first appearance.
struct TrialData {
  std::vector<std::string> arm_labels;
  std::vector<std::string> periods;  // empty label when there is no period column
  std::vector<Dataset> datasets;     // parallel to periods
};

// Required columns: subject_id, arm, events, exposure. Throws Schema with the
// offending row and column, or the validation errors of validate_dataset.
TrialData read_trial_csv(std::istream& in, const CsvReadOptions& options = {});
TrialData read_trial_csv_file(const std::string& path, const CsvReadOptions& options = {});

// Writes subject_id, arm, events, exposure, the covariates and the stratum
// column when present. Reading back yields the same records.
void write_trial_csv(std::ostream& out, const Dataset& data, const std::vector<std::string>& arm_labels);

// Per-stratum rate ratios. Natural scale columns: stratum, lambda, var_lambda,
// weight. Log scale columns: stratum, log_lambda, var_log_lambda, weight.
// A file may carry both pairs.
std::vector<StratumResult> read_meta_csv(std::istream& in);
std::vector<StratumResult> read_meta_csv_file(const std::string& path);

// Flat config: one `key = value` per line, '#' starts a comment, blank lines
// ignored. Later keys override earlier ones.
using ConfigMap = std::map<std::string, std::string>;
ConfigMap parse_config(std::istream& in);
ConfigMap parse_config_file(const std::string& path);
// Parses `key=value` and stores it in `config`. Throws InvalidArgument.
void apply_setting(ConfigMap& config, const std::string& assignment);

struct SimulationConfig {
  ScenarioSpec spec;
  int replicates = 2000;
  std::uint64_t seed = 1;
  int jobs = 1;
  double alpha = 0.05;
};

// `case` selects a preset (A-J) whose fields the remaining keys override;
// without it every scenario field comes from the file (kind = correlated_nb
// or zinb). Keys: case, kind, n, rho, pi, r_x, k_x, r0, r1, k0, k1, k,
// x_mean, beta0, beta_trt, beta1, beta2, reps, seed, jobs, alpha.
SimulationConfig simulation_config(const ConfigMap& config);

struct ArmAggregate {
  std::int64_t events = 0;
  double exposure = 0.0;
};

// Subject-level data reproducing the given arm totals: `subjects_per_arm`
// subjects per arm with equal follow-up and events spread as evenly as
// possible.
Dataset synthesize_from_aggregates(const std::vector<ArmAggregate>& arms, int subjects_per_arm);

}  // namespace emprate

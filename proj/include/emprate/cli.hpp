#pragma once

// Command-line front end: analyze, simulate, meta and calibrate.

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emprate/empirical.hpp"
#include "emprate/io.hpp"
#include "emprate/linmod.hpp"
#include "emprate/nbglm.hpp"

namespace emprate {

inline constexpr int kReportSchemaVersion = 1;

enum class MethodChoice { Empirical, NB, Both };

struct AnalyzeOptions {
  MethodChoice method = MethodChoice::Both;
  Adjustment adjustment = Adjustment::None;
  std::vector<std::string> covariates;
  std::vector<std::string> strata;
  double alpha = 0.05;
  std::optional<HcFlavor> hc_flavor;
  PearsonScaling nb_scaling = PearsonScaling::Sandwich;
  double exposure_divisor = 1.0;
};

struct ArmReport {
  std::string label;
  std::int64_t events = 0;
  double exposure = 0.0;
  std::size_t subjects = 0;
  double observed_rate = 0.0;
  std::optional<double> empirical_rate;
  std::optional<double> empirical_se;
  std::optional<double> nb_gcomp_rate;
  std::optional<double> nb_aipw_rate;
};

struct ComparisonReport {
  std::string numerator;
  std::string denominator;
  double raw_rr = 0.0;
  std::optional<RateRatioResult> empirical;
  std::optional<RateRatioResult> nb;
};

struct PeriodReport {
  std::string label;
  std::vector<ArmReport> arms;
  std::vector<ComparisonReport> comparisons;
  std::optional<std::string> nb_status;
  std::map<std::string, std::string> errors;  // method -> message
};

// One block per period; every non-control arm is compared with arm 0.
struct AnalysisReport {
  int schema_version = kReportSchemaVersion;
  AnalyzeOptions options;
  std::vector<std::string> arm_labels;
  std::vector<PeriodReport> periods;
};

// Estimator failures are recorded per period and method; they never abort
// the other methods.
AnalysisReport analyze(const TrialData& input, const AnalyzeOptions& options);

nlohmann::json to_json(const RateRatioResult& rr);
nlohmann::json to_json(const AnalysisReport& report);
std::string to_text(const AnalysisReport& report);

// Runs one command. `args` excludes the program name. Exit status 0 on
// success, 2 usage, 3 data and 4 numerical errors; failures write a JSON
// error object to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace emprate

#pragma once

// Subject-level count data for a parallel-arm randomized trial.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace emprate {

struct SubjectRecord {
  std::string subject_id;
  int arm = 0;                  // 0 = control
  std::int64_t count = 0;       // events observed during follow-up
  double exposure = 0.0;        // follow-up duration, caller-defined unit
  std::vector<double> covariates;
  std::optional<std::string> stratum;

  bool operator==(const SubjectRecord&) const = default;
};

// Validated, immutable collection of records sorted by (arm, subject_id),
// with cached per-arm aggregates.
class Dataset {
 public:
  const std::vector<SubjectRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  int arm_count() const { return static_cast<int>(arm_n_.size()); }
  std::size_t covariate_count() const { return covariate_names_.size(); }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  std::size_t arm_size(int arm) const { return arm_n_.at(arm); }
  std::int64_t arm_events(int arm) const { return arm_events_.at(arm); }
  double arm_exposure(int arm) const { return arm_exposure_.at(arm); }
  double arm_mean_exposure(int arm) const {
    return arm_exposure_.at(arm) / static_cast<double>(arm_n_.at(arm));
  }
  // Records of arm `arm` occupy [arm_begin(arm), arm_end(arm)).
  std::size_t arm_begin(int arm) const { return arm_offset_.at(arm); }
  std::size_t arm_end(int arm) const { return arm_offset_.at(arm) + arm_n_.at(arm); }

  double total_exposure() const;
  // True when every record carries a stratum label.
  bool has_strata() const { return has_strata_; }

  bool operator==(const Dataset&) const = default;

 private:
  friend Dataset validate_dataset(std::vector<SubjectRecord>, std::vector<std::string>,
                                  std::optional<int>);

  std::vector<SubjectRecord> records_;
  std::vector<std::string> covariate_names_;
  std::vector<std::size_t> arm_n_;
  std::vector<std::size_t> arm_offset_;
  std::vector<std::int64_t> arm_events_;
  std::vector<double> arm_exposure_;
  bool has_strata_ = false;
};

// Checks every record and builds the aggregates. When `arm_count` is not
// given it is inferred as max(arm) + 1. Covariate names default to x1..xp.
// Throws emprate::Error with NegativeCount, NonPositiveExposure,
// RaggedCovariates, MissingCovariate, ArmTooSmall, UnknownArmIndex or
// EmptyInput.
Dataset validate_dataset(std::vector<SubjectRecord> records,
                         std::vector<std::string> covariate_names = {},
                         std::optional<int> arm_count = std::nullopt);

}  // namespace emprate

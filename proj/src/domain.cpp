#include "emprate/domain.hpp"

#include <algorithm>
#include <cmath>

#include "emprate/error.hpp"

namespace emprate {

double Dataset::total_exposure() const {
  double total = 0.0;
  for (double e : arm_exposure_) total += e;
  return total;
}

Dataset validate_dataset(std::vector<SubjectRecord> records,
                         std::vector<std::string> covariate_names,
                         std::optional<int> arm_count) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no records");

  const std::size_t p = records.front().covariates.size();
  if (!covariate_names.empty() && covariate_names.size() != p) {
    throw Error(ErrorCode::RaggedCovariates,
                std::to_string(covariate_names.size()) + " covariate names for " +
                    std::to_string(p) + " covariate values");
  }
  if (covariate_names.empty()) {
    for (std::size_t c = 0; c < p; ++c) covariate_names.push_back("x" + std::to_string(c + 1));
  }

  int max_arm = -1;
  for (const auto& r : records) {
    const std::string who = "subject '" + r.subject_id + "'";
    if (r.arm < 0 || (arm_count && r.arm >= *arm_count)) {
      throw Error(ErrorCode::UnknownArmIndex, who + " has arm index " + std::to_string(r.arm));
    }
    if (r.count < 0) throw Error(ErrorCode::NegativeCount, who + " has a negative count");
    if (!(r.exposure > 0.0) || !std::isfinite(r.exposure)) {
      throw Error(ErrorCode::NonPositiveExposure, who + " has exposure " + std::to_string(r.exposure));
    }
    if (r.covariates.size() != p) {
      throw Error(ErrorCode::RaggedCovariates,
                  who + " has " + std::to_string(r.covariates.size()) + " covariates, expected " +
                      std::to_string(p));
    }
    for (std::size_t c = 0; c < p; ++c) {
      if (!std::isfinite(r.covariates[c])) {
        throw Error(ErrorCode::MissingCovariate, who + " is missing covariate " + covariate_names[c]);
      }
    }
    max_arm = std::max(max_arm, r.arm);
  }

  const int arms = arm_count.value_or(max_arm + 1);
  if (arms < 1) throw Error(ErrorCode::UnknownArmIndex, "arm count must be positive");

  std::stable_sort(records.begin(), records.end(), [](const SubjectRecord& a, const SubjectRecord& b) {
    if (a.arm != b.arm) return a.arm < b.arm;
    return a.subject_id < b.subject_id;
  });

  Dataset d;
  d.arm_n_.assign(arms, 0);
  d.arm_offset_.assign(arms, 0);
  d.arm_events_.assign(arms, 0);
  d.arm_exposure_.assign(arms, 0.0);
  d.has_strata_ = true;
  for (const auto& r : records) {
    d.arm_n_[r.arm] += 1;
    d.arm_events_[r.arm] += r.count;
    d.arm_exposure_[r.arm] += r.exposure;
    if (!r.stratum) d.has_strata_ = false;
  }
  std::size_t offset = 0;
  for (int a = 0; a < arms; ++a) {
    if (d.arm_n_[a] < 2) {
      throw Error(ErrorCode::ArmTooSmall,
                  "arm " + std::to_string(a) + " has " + std::to_string(d.arm_n_[a]) +
                      " subjects; at least 2 required");
    }
    d.arm_offset_[a] = offset;
    offset += d.arm_n_[a];
  }
  d.records_ = std::move(records);
  d.covariate_names_ = std::move(covariate_names);
  return d;
}

}  // namespace emprate

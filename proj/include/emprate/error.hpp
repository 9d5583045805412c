#pragma once

#include <stdexcept>
#include <string>

namespace emprate {

enum class ErrorCode {
  EmptyInput,
  NegativeCount,
  NonPositiveExposure,
  RaggedCovariates,
  MissingCovariate,
  ArmTooSmall,
  UnknownArmIndex,
  RankDeficient,
  LeverageOne,
  ZeroEventsArm,
  NonPositiveRate,
  DegenerateVariance,
  SingularInformation,
  NonConvergence,
  EmptyArm,
  NonPositiveLambda,
  UnknownCase,
  Unachievable,
  InvalidArgument,
  Schema,
};

const char* to_string(ErrorCode code);

// Broad classes used to pick a process exit status.
enum class ErrorClass { Usage, Data, Numerical };
ErrorClass classify(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace emprate

#include "emprate/error.hpp"

namespace emprate {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NegativeCount: return "NegativeCount";
    case ErrorCode::NonPositiveExposure: return "NonPositiveExposure";
    case ErrorCode::RaggedCovariates: return "RaggedCovariates";
    case ErrorCode::MissingCovariate: return "MissingCovariate";
    case ErrorCode::ArmTooSmall: return "ArmTooSmall";
    case ErrorCode::UnknownArmIndex: return "UnknownArmIndex";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::LeverageOne: return "LeverageOne";
    case ErrorCode::ZeroEventsArm: return "ZeroEventsArm";
    case ErrorCode::NonPositiveRate: return "NonPositiveRate";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::SingularInformation: return "SingularInformation";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::EmptyArm: return "EmptyArm";
    case ErrorCode::NonPositiveLambda: return "NonPositiveLambda";
    case ErrorCode::UnknownCase: return "UnknownCase";
    case ErrorCode::Unachievable: return "Unachievable";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Schema: return "Schema";
  }
  return "Unknown";
}

ErrorClass classify(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownCase:
      return ErrorClass::Usage;
    case ErrorCode::RankDeficient:
    case ErrorCode::LeverageOne:
    case ErrorCode::ZeroEventsArm:
    case ErrorCode::NonPositiveRate:
    case ErrorCode::DegenerateVariance:
    case ErrorCode::SingularInformation:
    case ErrorCode::NonConvergence:
    case ErrorCode::NonPositiveLambda:
    case ErrorCode::Unachievable:
      return ErrorClass::Numerical;
    default:
      return ErrorClass::Data;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

}  // namespace emprate

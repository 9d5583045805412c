#include "emprate/stats.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>

namespace emprate {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

double normal_p_value(double z, Alternative alt) {
  switch (alt) {
    case Alternative::Greater: return normal_cdf(-z);
    case Alternative::Less: return normal_cdf(z);
    case Alternative::TwoSided: break;
  }
  return std::min(1.0, std::erfc(std::fabs(z) / std::sqrt(2.0)));
}

}  // namespace emprate

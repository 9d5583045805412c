#pragma once

namespace emprate {

double normal_cdf(double z);
double normal_quantile(double p);

enum class Alternative { TwoSided, Greater, Less };

// p-value of a standard-normal statistic.
double normal_p_value(double z, Alternative alt = Alternative::TwoSided);

}  // namespace emprate

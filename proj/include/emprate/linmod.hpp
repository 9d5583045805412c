#pragma once

// Ordinary least squares with heteroskedasticity-consistent covariance.

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace emprate {

struct DesignMatrix {
  Eigen::MatrixXd x;
  std::vector<std::string> column_names;

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index cols() const { return x.cols(); }
};

struct OLSFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd residuals;
  Eigen::VectorXd fitted;
  Eigen::MatrixXd xtx_inv;
  DesignMatrix design;
};

enum class HcFlavor { HC0, HC1, HC3 };

const char* to_string(HcFlavor flavor);
HcFlavor parse_hc_flavor(const std::string& name);

// HC3 while any arm has fewer than 250 subjects, HC1 otherwise.
HcFlavor default_hc_flavor(std::size_t smallest_arm);

// Relative pivot tolerance for the rank check.
inline constexpr double kRankTolerance = 1e-10;

// Solves by column-pivoted Householder QR. Throws RankDeficient naming the
// columns that fall below the rank tolerance.
OLSFit fit_ols(const DesignMatrix& design, const Eigen::VectorXd& response);

// Sandwich (X'X)^-1 X' Omega X (X'X)^-1 with Omega = diag(e^2) (HC0),
// scaled by n/(n-p) (HC1), or diag(e^2/(1-h)^2) (HC3).
Eigen::MatrixXd hc_covariance(const OLSFit& fit, HcFlavor flavor);

}  // namespace emprate

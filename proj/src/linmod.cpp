#include "emprate/linmod.hpp"

#include <cmath>

#include "emprate/error.hpp"

namespace emprate {

const char* to_string(HcFlavor flavor) {
  switch (flavor) {
    case HcFlavor::HC0: return "HC0";
    case HcFlavor::HC1: return "HC1";
    case HcFlavor::HC3: return "HC3";
  }
  return "?";
}

HcFlavor parse_hc_flavor(const std::string& name) {
  if (name == "HC0" || name == "hc0") return HcFlavor::HC0;
  if (name == "HC1" || name == "hc1") return HcFlavor::HC1;
  if (name == "HC3" || name == "hc3") return HcFlavor::HC3;
  throw Error(ErrorCode::InvalidArgument, "unknown HC flavor '" + name + "'");
}

HcFlavor default_hc_flavor(std::size_t smallest_arm) {
  return smallest_arm < 250 ? HcFlavor::HC3 : HcFlavor::HC1;
}

OLSFit fit_ols(const DesignMatrix& design, const Eigen::VectorXd& response) {
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  if (response.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "response length does not match design rows");
  }
  if (n < p || p == 0) {
    throw Error(ErrorCode::RankDeficient, "design has " + std::to_string(n) + " rows and " +
                                              std::to_string(p) + " columns");
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.x);
  qr.setThreshold(kRankTolerance);
  if (qr.rank() < p) {
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < p; ++j) {
      const auto col = static_cast<std::size_t>(perm(j));
      if (!names.empty()) names += ", ";
      names += col < design.column_names.size() ? design.column_names[col] : "#" + std::to_string(col);
    }
    throw Error(ErrorCode::RankDeficient, "collinear columns: " + names);
  }

  OLSFit fit;
  fit.design = design;
  fit.coef = qr.solve(response);
  fit.fitted = design.x * fit.coef;
  fit.residuals = response - fit.fitted;

  // (X'X)^-1 = P R^-1 R^-T P'
  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd inner = r_inv * r_inv.transpose();
  const auto perm = qr.colsPermutation();
  fit.xtx_inv = perm * inner * perm.transpose();
  fit.xtx_inv = 0.5 * (fit.xtx_inv + fit.xtx_inv.transpose()).eval();
  return fit;
}

Eigen::MatrixXd hc_covariance(const OLSFit& fit, HcFlavor flavor) {
  const Eigen::MatrixXd& x = fit.design.x;
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();

  Eigen::VectorXd omega = fit.residuals.array().square();
  if (flavor == HcFlavor::HC3) {
    const Eigen::VectorXd leverage = ((x * fit.xtx_inv).array() * x.array()).rowwise().sum();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double slack = 1.0 - leverage(j);
      if (slack < 1e-10) {
        throw Error(ErrorCode::LeverageOne, "observation " + std::to_string(j) + " has leverage 1");
      }
      omega(j) /= slack * slack;
    }
  }

  const Eigen::MatrixXd meat = x.transpose() * (x.array().colwise() * omega.array()).matrix();
  Eigen::MatrixXd cov = fit.xtx_inv * meat * fit.xtx_inv;
  if (flavor == HcFlavor::HC1) {
    cov *= static_cast<double>(n) / static_cast<double>(n - p);
  }
  return 0.5 * (cov + cov.transpose());
}

}  // namespace emprate

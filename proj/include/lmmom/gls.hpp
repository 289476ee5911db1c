#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "lmmom/dataset.hpp"
#include "lmmom/errors.hpp"

namespace lmmom {

/// Fitted fixed effects of the one-level mixed model, obtained from the
/// within/between decomposition:
///
///   sigma_hat = (1/N) sum_i sum_j (x_ij - xbar_i)(x_ij - xbar_i)'
///   beta_hat  = sigma_hat^{-1} (1/N) sum_i sum_j (x_ij - xbar_i)(y_ij - ybar_i)
///   alpha_hat = (1/n) sum_i ybar_i - (1/n) sum_i xbar_i' beta_hat
///
/// where xbar_i, ybar_i are group means, n the number of groups, and N the
/// total row count. Centering within groups removes both the intercept and
/// the random effect, so beta_hat needs no knowledge of the error laws.
struct FixedEffectsFit {
  double alpha = 0.0;
  Eigen::VectorXd beta;              // length p
  Eigen::MatrixXd sigma;             // p-by-p pooled within-group scatter
  std::vector<Eigen::VectorXd> residuals;  // per group: y - alpha - x beta
  std::vector<std::string> group_ids;
  Eigen::Index n = 0;  // groups
  Eigen::Index N = 0;  // rows
};

/// Unbalancedness diagnostics of a grouped design. With l_i the group sizes:
///
///   c_n = (N / n^2) * sum_i 1/l_i          (equals 1 iff all sizes equal)
///   d_n = sum_i l_i^2 / N - sum_i l_i / n  (equals 0 iff all sizes equal)
///   x0  = pooled covariate mean - average of group covariate means
///
/// They feed the first-step variance formulas; growing c_n or d_n signals a
/// design unbalanced enough to inflate first-step estimators.
struct DesignDiagnostics {
  double c_n = 1.0;
  double d_n = 0.0;
  double mean_group_size = 0.0;
  Eigen::VectorXd x0;  // length p
};

/// Least-squares fit of alpha and beta as displayed above.
///
/// Requires n >= 2 groups. The linear solve guards against a numerically
/// singular within-group scatter (all-constant covariates within groups,
/// duplicated columns, l_i = 1 everywhere) via the reciprocal condition
/// number of its Cholesky factorization; below 1e-12 a SingularDesign is
/// thrown rather than returning garbage coefficients. p = 0 reduces to the
/// intercept-only fit alpha_hat = mean of group means.
inline FixedEffectsFit gls_fit(const GroupedDataset& ds) {
  ds.validate();
  const Eigen::Index n = ds.group_count();
  if (n < 2) throw UsageError("fit needs at least two groups");
  const Eigen::Index p = ds.p;
  const Eigen::Index N = ds.total_rows();

  FixedEffectsFit fit;
  fit.n = n;
  fit.N = N;
  fit.sigma = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd mean_of_xbars = Eigen::VectorXd::Zero(p);
  double mean_of_ybars = 0.0;

  std::vector<Eigen::VectorXd> xbars(static_cast<std::size_t>(n));
  std::vector<double> ybars(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Group& g = ds.groups[static_cast<std::size_t>(i)];
    const Eigen::VectorXd xbar = g.x.colwise().mean();
    const double ybar = g.y.mean();
    xbars[static_cast<std::size_t>(i)] = xbar;
    ybars[static_cast<std::size_t>(i)] = ybar;
    const Eigen::MatrixXd xc = g.x.rowwise() - xbar.transpose();
    const Eigen::VectorXd yc = g.y.array() - ybar;
    fit.sigma.noalias() += xc.transpose() * xc;
    rhs.noalias() += xc.transpose() * yc;
    mean_of_xbars += xbar;
    mean_of_ybars += ybar;
  }
  fit.sigma /= static_cast<double>(N);
  rhs /= static_cast<double>(N);
  mean_of_xbars /= static_cast<double>(n);
  mean_of_ybars /= static_cast<double>(n);

  if (p > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.sigma);
    const double rc = ldlt.rcond();
    if (ldlt.info() != Eigen::Success || !(rc > 1e-12)) {
      throw SingularDesign(rc);
    }
    fit.beta = ldlt.solve(rhs);
  } else {
    fit.beta.resize(0);
  }
  fit.alpha = mean_of_ybars - mean_of_xbars.dot(fit.beta);

  fit.residuals.reserve(static_cast<std::size_t>(n));
  fit.group_ids.reserve(static_cast<std::size_t>(n));
  for (const auto& g : ds.groups) {
    Eigen::VectorXd r = g.y.array() - fit.alpha;
    if (p > 0) r.noalias() -= g.x * fit.beta;
    fit.residuals.push_back(std::move(r));
    fit.group_ids.push_back(g.id);
  }
  return fit;
}

/// Compute the unbalancedness diagnostics of a dataset.
inline DesignDiagnostics design_diagnostics(const GroupedDataset& ds) {
  ds.validate();
  const double n = static_cast<double>(ds.group_count());
  const double N = static_cast<double>(ds.total_rows());

  DesignDiagnostics diag;
  double inv_l = 0.0;
  double sq_l = 0.0;
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(ds.p);
  Eigen::VectorXd mean_of_means = Eigen::VectorXd::Zero(ds.p);
  for (const auto& g : ds.groups) {
    const double l = static_cast<double>(g.rows());
    inv_l += 1.0 / l;
    sq_l += l * l;
    if (ds.p > 0) {
      pooled += g.x.colwise().sum().transpose();
      mean_of_means += Eigen::VectorXd(g.x.colwise().mean());
    }
  }
  diag.c_n = (N / (n * n)) * inv_l;
  diag.d_n = sq_l / N - N / n;
  diag.mean_group_size = N / n;
  diag.x0 = pooled / N - mean_of_means / n;
  return diag;
}

/// Quadratic form x0' sigma_hat^{-1} x0 needed by the first-step variance
/// of the third moment. Zero for intercept-only designs.
inline double sigma_inv_quad(const FixedEffectsFit& fit,
                             const Eigen::VectorXd& x0) {
  if (fit.beta.size() == 0) return 0.0;
  if (x0.size() != fit.sigma.rows()) {
    throw UsageError("x0 length does not match the design dimension");
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.sigma);
  const double rc = ldlt.rcond();
  if (ldlt.info() != Eigen::Success || !(rc > 1e-12)) {
    throw SingularDesign(rc);
  }
  return x0.dot(ldlt.solve(x0));
}

}  // namespace lmmom

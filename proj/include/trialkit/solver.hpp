#ifndef TRIALKIT_SOLVER_HPP
#define TRIALKIT_SOLVER_HPP

#include <Eigen/Dense>
#include <limits>

#include "trialkit/dataset.hpp"
#include "trialkit/design.hpp"
#include "trialkit/formula.hpp"

namespace trialkit {

struct VarianceComponents {
  double sigma2_residual = 0.0;
  double sigma2_random = 0.0;  // 0 when the model has no fitted random term
  double gamma = 0.0;          // sigma2_random / sigma2_residual
  bool at_boundary = false;    // REML estimate hit gamma = 0
};

// A fitted linear model: effect estimates under corner-point coding,
// their covariance, variance components and the containment degrees of
// freedom used for all t-based inference.
struct FittedModel {
  ModelSpec spec;
  Dataset data;
  DesignMatrices design;
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov_beta;  // sigma2 * (X'X)^+ resp. (X'V^-1 X)^+
  // Small-sample adjusted covariance used for SEDs; equals vcov_beta for
  // fixed-effects-only fits and for boundary fits (gamma = 0).
  Eigen::MatrixXd vcov_beta_adjusted;
  VarianceComponents vc;
  int df_policy = 0;  // n - rank([X Z])
  double reml_loglik = std::numeric_limits<double>::quiet_NaN();
  bool converged = true;
  bool mixed = false;

  // Orthonormal basis of the row space of X (p x rank); a linear
  // combination c'beta is estimable iff c lies in this span.
  Eigen::MatrixXd rowspace;

  bool estimable(const Eigen::VectorXd& coef) const;
};

// Ordinary least squares for models whose random side is empty or fully
// residual-aliased. sigma2_residual = RSS / (n - rank X), df = n - rank X.
FittedModel fit_ols(const Dataset& ds, const ModelSpec& spec);

// Profile REML for models with exactly one non-aliased random term:
// V(gamma) = sigma2_e (I + gamma ZZ'), gamma maximized by bracketed 1-D
// search on log(gamma) over [1e-8, 1e8] plus the boundary gamma = 0;
// fixed effects by GLS at the optimum. Throws ModelError when the spec
// has no fittable random term or the search does not converge.
FittedModel fit_reml(const Dataset& ds, const ModelSpec& spec);

// Dispatches on the design: REML when a non-aliased random term exists,
// OLS otherwise.
FittedModel fit_model(const Dataset& ds, const ModelSpec& spec);

// REML log-likelihood at a fixed variance ratio (the objective fit_reml
// maximizes), exposed for audit and testing.
double loglik_reml(const Dataset& ds, const ModelSpec& spec, double gamma);

}  // namespace trialkit

#endif  // TRIALKIT_SOLVER_HPP

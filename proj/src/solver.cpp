#include "trialkit/solver.hpp"

#include <algorithm>
#include <cmath>

#include "trialkit/errors.hpp"

namespace trialkit {

namespace {

constexpr double kLogGammaLo = -8.0 * 2.302585092994046;  // log(1e-8)
constexpr double kLogGammaHi = 8.0 * 2.302585092994046;   // log(1e8)
constexpr double kLoglikTol = 1e-10;
constexpr int kMaxIter = 200;

Eigen::VectorXd response_vector(const Dataset& ds) {
  return Eigen::Map<const Eigen::VectorXd>(ds.response().data(),
                                           static_cast<Eigen::Index>(
                                               ds.n_rows()));
}

Eigen::Index rank_of(const Eigen::MatrixXd& m) {
  if (m.cols() == 0 || m.rows() == 0) return 0;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  qr.setThreshold(1e-8 * m.colwise().norm().maxCoeff());
  return qr.rank();
}

// Orthonormal basis of the row space of X via thin SVD, truncated at the
// pivoted-QR rank.
Eigen::MatrixXd rowspace_basis(const Eigen::MatrixXd& X, Eigen::Index rank) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinV);
  return svd.matrixV().leftCols(rank);
}

// Shared state for evaluating the profiled REML objective at any gamma:
// rotate by the eigenvectors of ZZ' once, then each evaluation whitens by
// diag(1 + gamma d)^{-1/2}.
struct RemlWorkspace {
  Eigen::MatrixXd Xr;      // U' X
  Eigen::VectorXd yr;      // U' y
  Eigen::VectorXd d;       // eigenvalues of ZZ'
  Eigen::Index n = 0, p = 0, rank_x = 0;

  struct Eval {
    double loglik;
    double sigma2_e;
    Eigen::VectorXd beta;
    Eigen::MatrixXd xtvix_pinv;  // (X' H^-1 X)^+
  };

  Eval eval(double gamma, bool want_beta) const {
    Eigen::VectorXd w =
        (1.0 + gamma * d.array()).inverse().sqrt().matrix();
    Eigen::MatrixXd Xw = w.asDiagonal() * Xr;
    Eigen::VectorXd yw = w.asDiagonal() * yr;

    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Xw);
    cod.setThreshold(1e-12);
    Eigen::VectorXd beta = cod.solve(yw);
    double rss = (yw - Xw * beta).squaredNorm();
    double nmr = static_cast<double>(n - rank_x);
    if (rss <= 0.0 || !(rss > 0.0)) {
      throw ModelError("residual variance is zero; REML is undefined");
    }
    double sigma2_e = rss / nmr;

    // log|H| with H = I + gamma ZZ'.
    double logdet_h = (1.0 + gamma * d.array()).log().sum();
    // log|X' H^-1 X| restricted to the rank of X.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    qr.setThreshold(1e-8 * Xw.colwise().norm().maxCoeff());
    double logdet_xhx = 0.0;
    for (Eigen::Index i = 0; i < rank_x; ++i) {
      logdet_xhx += 2.0 * std::log(std::abs(qr.matrixR()(i, i)));
    }

    Eval out;
    out.loglik = -0.5 * (nmr * std::log(2.0 * M_PI) + nmr +
                         nmr * std::log(sigma2_e) + logdet_h + logdet_xhx);
    out.sigma2_e = sigma2_e;
    if (want_beta) {
      out.beta = std::move(beta);
      Eigen::MatrixXd xw_pinv = cod.pseudoInverse();
      out.xtvix_pinv = xw_pinv * xw_pinv.transpose();
    }
    return out;
  }
};

RemlWorkspace make_workspace(const Dataset& ds, const DesignMatrices& dm) {
  RemlWorkspace ws;
  ws.n = dm.X.rows();
  ws.p = dm.X.cols();
  ws.rank_x = dm.rank_x;
  Eigen::MatrixXd zzt = dm.Z * dm.Z.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(zzt);
  ws.d = eig.eigenvalues().cwiseMax(0.0);
  ws.Xr = eig.eigenvectors().transpose() * dm.X;
  ws.yr = eig.eigenvectors().transpose() * response_vector(ds);
  return ws;
}

void require_n_exceeds_rank(Eigen::Index n, Eigen::Index rank) {
  if (n <= rank) {
    throw ModelError(
        "no residual degrees of freedom: n <= rank of the fixed design");
  }
}

// First-order small-sample adjustment of the GLS covariance for one
// variance component, with the variance-parameter covariance taken from
// the observed REML information. Reproduces the covariance inflation that
// mixed-model packages apply before quoting SEDs; the containment df
// policy is unaffected.
Eigen::MatrixXd adjusted_vcov(const Eigen::MatrixXd& X,
                              const Eigen::MatrixXd& Z,
                              const Eigen::VectorXd& y, double sigma2_e,
                              double sigma2_u,
                              const Eigen::MatrixXd& phi) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd zzt = Z * Z.transpose();
  Eigen::MatrixXd v = sigma2_e * Eigen::MatrixXd::Identity(n, n) +
                      sigma2_u * zzt;
  Eigen::LLT<Eigen::MatrixXd> llt(v);
  if (llt.info() != Eigen::Success) return phi;
  Eigen::MatrixXd vi = llt.solve(Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd vix = vi * X;
  Eigen::MatrixXd pmat = vi - vix * phi * vix.transpose();

  // d V / d theta for theta = (sigma2_u, sigma2_e).
  std::array<const Eigen::MatrixXd*, 2> dv = {&zzt, nullptr};
  Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(n, n);
  dv[1] = &ident;

  std::array<Eigen::MatrixXd, 2> pdv;
  for (int i = 0; i < 2; ++i) pdv[i] = pmat * (*dv[i]);
  Eigen::VectorXd py = pmat * y;

  // Observed REML information O_ij =
  //   -1/2 tr(P Vi P Vj) + 1/2 y'P(Vi P Vj + Vj P Vi)P y.
  Eigen::Matrix2d obs_info;
  for (int i = 0; i < 2; ++i) {
    for (int j = i; j < 2; ++j) {
      double tr = (pdv[i] * pdv[j]).trace();
      double quad = py.dot((*dv[i]) * pmat * ((*dv[j]) * py)) +
                    py.dot((*dv[j]) * pmat * ((*dv[i]) * py));
      obs_info(i, j) = obs_info(j, i) = -0.5 * tr + 0.5 * quad;
    }
  }
  Eigen::Matrix2d w;
  bool invertible = false;
  obs_info.computeInverseWithCheck(w, invertible);
  if (!invertible || w(0, 0) <= 0.0 || w(1, 1) <= 0.0) {
    // Fall back to the expected information.
    Eigen::Matrix2d exp_info;
    for (int i = 0; i < 2; ++i) {
      for (int j = i; j < 2; ++j) {
        exp_info(i, j) = exp_info(j, i) = 0.5 * (pdv[i] * pdv[j]).trace();
      }
    }
    exp_info.computeInverseWithCheck(w, invertible);
    if (!invertible) return phi;
  }

  std::array<Eigen::MatrixXd, 2> pi;
  std::array<std::array<Eigen::MatrixXd, 2>, 2> qij;
  for (int i = 0; i < 2; ++i) {
    pi[i] = -(vix.transpose() * (*dv[i]) * vix);
    for (int j = 0; j < 2; ++j) {
      qij[i][j] = vix.transpose() * (*dv[i]) * vi * (*dv[j]) * vix;
    }
  }
  Eigen::MatrixXd mid = Eigen::MatrixXd::Zero(X.cols(), X.cols());
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      mid += w(i, j) * (qij[i][j] - pi[i] * phi * pi[j]);
    }
  }
  Eigen::MatrixXd adjusted = phi + 2.0 * phi * mid * phi;
  adjusted = 0.5 * (adjusted + adjusted.transpose()).eval();
  if ((adjusted.diagonal().array() < 0.0).any()) return phi;
  return adjusted;
}

}  // namespace

bool FittedModel::estimable(const Eigen::VectorXd& coef) const {
  if (design.rank_x == design.X.cols()) return true;
  Eigen::VectorXd proj = rowspace * (rowspace.transpose() * coef);
  double scale = std::max(1.0, coef.norm());
  return (coef - proj).norm() <= 1e-8 * scale;
}

FittedModel fit_ols(const Dataset& ds, const ModelSpec& spec) {
  FittedModel fm;
  fm.spec = spec;
  fm.data = ds;
  fm.design = build_design(ds, spec);
  if (fm.design.has_random()) {
    throw ModelError(
        "model has a fittable random term; use fit_reml (or fit_model)");
  }
  const Eigen::MatrixXd& X = fm.design.X;
  const Eigen::Index n = X.rows();
  require_n_exceeds_rank(n, fm.design.rank_x);
  Eigen::VectorXd y = response_vector(ds);

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
  cod.setThreshold(1e-12);
  fm.beta = cod.solve(y);
  double rss = (y - X * fm.beta).squaredNorm();
  double df = static_cast<double>(n - fm.design.rank_x);
  fm.vc.sigma2_residual = rss / df;
  fm.vc.sigma2_random = 0.0;
  fm.vc.gamma = 0.0;
  fm.df_policy = static_cast<int>(n - fm.design.rank_x);
  Eigen::MatrixXd x_pinv = cod.pseudoInverse();
  fm.vcov_beta = fm.vc.sigma2_residual * (x_pinv * x_pinv.transpose());
  fm.vcov_beta_adjusted = fm.vcov_beta;
  fm.rowspace = rowspace_basis(X, fm.design.rank_x);
  fm.mixed = false;
  fm.converged = true;
  return fm;
}

FittedModel fit_reml(const Dataset& ds, const ModelSpec& spec) {
  FittedModel fm;
  fm.spec = spec;
  fm.data = ds;
  fm.design = build_design(ds, spec);
  if (!fm.design.has_random()) {
    throw ModelError(
        "model has no fittable random term (empty or residual-aliased "
        "random side); use fit_ols");
  }
  const Eigen::Index n = fm.design.X.rows();
  require_n_exceeds_rank(n, fm.design.rank_x);

  RemlWorkspace ws = make_workspace(ds, fm.design);
  auto objective = [&](double log_gamma) {
    return ws.eval(std::exp(log_gamma), false).loglik;
  };

  // Coarse bracket on a half-decade log grid, then golden-section search.
  const int grid_points = 33;
  double best_lg = kLogGammaLo;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid_points; ++i) {
    double lg = kLogGammaLo +
                (kLogGammaHi - kLogGammaLo) * i / (grid_points - 1);
    double ll = objective(lg);
    if (ll > best_ll) {
      best_ll = ll;
      best_lg = lg;
    }
  }
  double step = (kLogGammaHi - kLogGammaLo) / (grid_points - 1);
  double lo = std::max(kLogGammaLo, best_lg - step);
  double hi = std::min(kLogGammaHi, best_lg + step);

  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - invphi * (hi - lo);
  double x2 = lo + invphi * (hi - lo);
  double f1 = objective(x1);
  double f2 = objective(x2);
  double prev = std::max(f1, f2);
  bool converged = false;
  int iter = 0;
  for (; iter < kMaxIter; ++iter) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + invphi * (hi - lo);
      f2 = objective(x2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - invphi * (hi - lo);
      f1 = objective(x1);
    }
    double cur = std::max(f1, f2);
    if (std::abs(cur - prev) < kLoglikTol) {
      converged = true;
      break;
    }
    prev = cur;
  }
  if (!converged) {
    throw ModelError("REML search did not converge within " +
                     std::to_string(kMaxIter) + " iterations");
  }
  double gamma_hat = std::exp(0.5 * (lo + hi));
  double ll_interior = objective(0.5 * (lo + hi));

  // The boundary gamma = 0 competes with the interior optimum.
  double ll_zero = ws.eval(0.0, false).loglik;
  bool at_boundary = ll_zero >= ll_interior;
  if (at_boundary) gamma_hat = 0.0;

  RemlWorkspace::Eval opt = ws.eval(gamma_hat, true);
  fm.beta = opt.beta;
  fm.vc.sigma2_residual = opt.sigma2_e;
  fm.vc.gamma = gamma_hat;
  fm.vc.sigma2_random = gamma_hat * opt.sigma2_e;
  fm.vc.at_boundary = at_boundary;
  fm.reml_loglik = opt.loglik;
  fm.vcov_beta = opt.sigma2_e * opt.xtvix_pinv;
  fm.mixed = true;
  fm.converged = true;

  Eigen::MatrixXd xz(n, fm.design.X.cols() + fm.design.Z.cols());
  xz << fm.design.X, fm.design.Z;
  fm.df_policy = static_cast<int>(n - rank_of(xz));
  fm.rowspace = rowspace_basis(fm.design.X, fm.design.rank_x);

  if (at_boundary) {
    fm.vcov_beta_adjusted = fm.vcov_beta;
  } else {
    fm.vcov_beta_adjusted =
        adjusted_vcov(fm.design.X, fm.design.Z, response_vector(ds),
                      fm.vc.sigma2_residual, fm.vc.sigma2_random,
                      fm.vcov_beta);
  }
  return fm;
}

FittedModel fit_model(const Dataset& ds, const ModelSpec& spec) {
  DesignMatrices dm = build_design(ds, spec);
  return dm.has_random() ? fit_reml(ds, spec) : fit_ols(ds, spec);
}

double loglik_reml(const Dataset& ds, const ModelSpec& spec, double gamma) {
  if (gamma < 0.0) {
    throw ModelError("gamma must be non-negative");
  }
  DesignMatrices dm = build_design(ds, spec);
  if (!dm.has_random()) {
    throw ModelError("model has no fittable random term");
  }
  require_n_exceeds_rank(dm.X.rows(), dm.rank_x);
  RemlWorkspace ws = make_workspace(ds, dm);
  return ws.eval(gamma, false).loglik;
}

}  // namespace trialkit

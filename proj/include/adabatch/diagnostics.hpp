#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "adabatch/problem.hpp"
#include "adabatch/rng.hpp"
#include "adabatch/schedules.hpp"

namespace adabatch {

// Analytic curvature and optimum data for problems that admit them.
// M_L^2 / M_U^2 are trajectory extremes of M^2 and are filled from a
// recorded trace (or from the w0 estimate when a prescription needs them ahead
// of the run).
struct ProblemConstants {
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();
  double kappa = std::numeric_limits<double>::quiet_NaN();
  double m_l_sq = std::numeric_limits<double>::quiet_NaN();
  double m_u_sq = std::numeric_limits<double>::quiet_NaN();
  double f_star = std::numeric_limits<double>::quiet_NaN();
  double dist0_sq = std::numeric_limits<double>::quiet_NaN();
  Weights w_star;
  bool rank_deficient = false;
};

// M^2(w) = (1/n) sum_i ||grad f_i(w)||^2.
inline double m_squared(const ProblemInstance& p, const Weights& w) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.n_train(); ++i)
    total += grad_example(p, w, i).squaredNorm();
  return total / static_cast<double>(p.n_train());
}

struct StationaryPointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Gradient diversity sum ||grad f_i||^2 / ||sum grad f_i||^2; equals
// M^2(w) / (n ||grad F(w)||^2). 1/n when all gradients coincide, 1 when
// they are mutually orthogonal. Undefined at stationary points.
inline double gradient_diversity(const ProblemInstance& p, const Weights& w) {
  const double full_norm_sq = grad_full(p, w).squaredNorm();
  if (full_norm_sq <= 0.0)
    throw StationaryPointError("gradient diversity is undefined at a stationary point");
  return m_squared(p, w) / (static_cast<double>(p.n_train()) * full_norm_sq);
}

// With-replacement minibatch variance E||grad F - g||^2 = (M^2 - ||grad F||^2)/B.
inline double minibatch_variance_closed_form(const ProblemInstance& p, const Weights& w,
                                             Count batch) {
  if (batch < 1) throw ConfigError("minibatch_variance_closed_form: B must be >= 1");
  const double value =
      (m_squared(p, w) - grad_full(p, w).squaredNorm()) / static_cast<double>(batch);
  return std::max(0.0, value);
}

struct VarianceReport {
  Weights w;
  Count batch = 0;
  double empirical = 0.0;
  double closed_form = 0.0;
  double variance_ceiling = std::numeric_limits<double>::quiet_NaN();
  Count trials = 0;
  double std_err = 0.0;
};

// Variance ceiling of the loss-adaptive schedule: (F(w) - F*) M_U^2 / c.
inline double adaptive_variance_bound(double loss_gap, double m_u_sq, double c) {
  return loss_gap * m_u_sq / c;
}

// Monte-Carlo estimate of the minibatch gradient variance over independently
// resampled with-replacement batches. B == n runs the deterministic full
// batch (sanity mode, zero variance). When (f_star, m_u_sq, c) are supplied
// the report carries the adaptive-schedule variance ceiling alongside.
inline VarianceReport minibatch_variance_mc(
    const ProblemInstance& p, const Weights& w, Count batch, Count trials,
    std::uint64_t seed, double f_star = std::numeric_limits<double>::quiet_NaN(),
    double m_u_sq = std::numeric_limits<double>::quiet_NaN(),
    double c = std::numeric_limits<double>::quiet_NaN()) {
  if (trials < 100) throw ConfigError("minibatch_variance_mc: need at least 100 trials");
  const Weights full = grad_full(p, w);

  VarianceReport report;
  report.w = w;
  report.batch = batch;
  report.trials = trials;
  report.closed_form = minibatch_variance_closed_form(p, w, batch);
  if (std::isfinite(f_star) && std::isfinite(m_u_sq) && std::isfinite(c))
    report.variance_ceiling = adaptive_variance_bound(loss_full(p, w) - f_star, m_u_sq, c);

  if (batch >= p.n_train()) {
    report.empirical = 0.0;  // deterministic full batch
    return report;
  }

  Rng rng(seed);
  double sum = 0.0, sum_sq = 0.0;
  std::vector<Eigen::Index> indices(static_cast<std::size_t>(batch));
  for (Count t = 0; t < trials; ++t) {
    for (auto& idx : indices) idx = rng.uniform_int(0, p.n_train() - 1);
    const double err = (grad_minibatch(p, w, indices) - full).squaredNorm();
    sum += err;
    sum_sq += err * err;
  }
  const double mean = sum / static_cast<double>(trials);
  const double var = std::max(0.0, sum_sq / static_cast<double>(trials) - mean * mean);
  report.empirical = mean;
  report.std_err = std::sqrt(var / static_cast<double>(trials));
  return report;
}

struct DiversityBounds {
  double lower = 0.0;     // M_L^2 / (beta^2 n ||w - w*||^2)
  double upper_sc = 0.0;  // M_U^2 / (alpha^2 n ||w - w*||^2)
  double upper_pl = 0.0;  // M_U^2 / (2 alpha n (F(w) - F*))
};

inline DiversityBounds diversity_bounds(const ProblemConstants& constants, Count n,
                                        double dist_sq, double loss_gap) {
  if (dist_sq <= 0.0 || loss_gap <= 0.0)
    throw ConfigError("diversity_bounds: dist_sq and loss_gap must be positive");
  const double dn = static_cast<double>(n);
  DiversityBounds b;
  b.lower = constants.m_l_sq / (constants.beta * constants.beta * dn * dist_sq);
  b.upper_sc = constants.m_u_sq / (constants.alpha * constants.alpha * dn * dist_sq);
  b.upper_pl = constants.m_u_sq / (2.0 * constants.alpha * dn * loss_gap);
  return b;
}

// Exact curvature of the LeastSquares objective: H = (2/n) X'X + decay I,
// alpha = lambda_min(H), beta = lambda_max(H); F* and w* from the direct
// linear solve. Rank deficiency with zero decay leaves alpha = 0 flagged.
inline ProblemConstants quadratic_constants(const ProblemInstance& p) {
  if (p.kind != ProblemKind::LeastSquares)
    throw ConfigError("quadratic_constants: analytic route needs a LeastSquares problem");
  const Eigen::MatrixXd& x = p.data.x_train;
  const double n = static_cast<double>(x.rows());
  Eigen::MatrixXd h = (2.0 / n) * (x.transpose() * x);
  if (p.weight_decay > 0.0) h.diagonal().array() += p.weight_decay;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
  if (eig.info() != Eigen::Success)
    throw NumericError("quadratic_constants: eigendecomposition failed");

  ProblemConstants constants;
  constants.alpha = std::max(0.0, eig.eigenvalues().minCoeff());
  constants.beta = eig.eigenvalues().maxCoeff();

  const ErmResult erm = erm_reference(p);
  constants.f_star = erm.train_loss;
  constants.w_star = erm.weights;
  constants.rank_deficient = erm.rank_deficient;
  if (erm.rank_deficient && p.weight_decay == 0.0) constants.alpha = 0.0;
  constants.kappa = constants.beta / constants.alpha;
  return constants;
}

// Gradient-computation budgets to reach error eps:
//   PL      4 c r log(1/eps) / eps
//   Convex  4 c r / eps^2
//   Smooth  4 c r / eps^3
// The log is natural (the underlying argument uses 1 - x <= e^{-x}).
inline double gradient_computation_budget(FnClass fn_class, double c, double r, double eps) {
  if (eps <= 0.0) throw ConfigError("gradient_computation_budget: eps must be positive");
  switch (fn_class) {
    case FnClass::PL: return 4.0 * c * r * std::log(1.0 / eps) / eps;
    case FnClass::Convex: return 4.0 * c * r / (eps * eps);
    case FnClass::Smooth: return 4.0 * c * r / (eps * eps * eps);
  }
  return 0.0;
}

// Example-count bound 4 B0 (F(w0) - F*) T / eps for a T-update run.
inline double example_count_bound(Count b0, double delta0, Count t, double eps) {
  if (eps <= 0.0) throw ConfigError("example_count_bound: eps must be positive");
  return 4.0 * static_cast<double>(b0) * delta0 * static_cast<double>(t) / eps;
}

}  // namespace adabatch

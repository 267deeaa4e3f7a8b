#include <gtest/gtest.h>

#include <cmath>

#include "adabatch/diagnostics.hpp"
#include "adabatch/engine.hpp"

using namespace adabatch;

namespace {

// problem whose per-example gradients at w = 0 are exactly the given rows:
// x_i = row, y_i = -1/2 makes grad f_i(0) = -2 y_i x_i = x_i
ProblemInstance problem_with_gradients(const Eigen::MatrixXd& grads) {
  Dataset ds;
  ds.x_train = grads;
  ds.y_train = Eigen::VectorXd::Constant(grads.rows(), -0.5);
  return make_least_squares(std::move(ds));
}

Weights random_weights(const ProblemInstance& p, Rng& rng, double scale = 1.0) {
  Weights w(p.param_count());
  for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = scale * rng.normal();
  return w;
}

}  // namespace

TEST(MSquared, MeanSquaredGradientNorm) {
  Eigen::MatrixXd grads(2, 2);
  grads << 3, 4, 0, 0;  // norms 25 and 0
  ProblemInstance p = problem_with_gradients(grads);
  EXPECT_DOUBLE_EQ(m_squared(p, Weights::Zero(2)), 12.5);
}

TEST(MSquared, ZeroAtInterpolation) {
  ProblemInstance p = make_least_squares(gen_linear_data(30, 4, NoiseRule::Zero, 0.0, 3));
  EXPECT_NEAR(m_squared(p, p.data.true_weights), 0.0, 1e-24);
}

TEST(MSquared, DominatesFullGradientNormSquared) {
  ProblemInstance p = make_least_squares(gen_linear_data(50, 5, NoiseRule::Unit, 0.0, 5));
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const Weights w = random_weights(p, rng, 1.5);
    ASSERT_GE(m_squared(p, w), grad_full(p, w).squaredNorm() - 1e-12);
  }
}

TEST(GradientDiversity, IdenticalGradientsGiveOneOverN) {
  Eigen::MatrixXd grads(5, 3);
  for (int i = 0; i < 5; ++i) grads.row(i) << 1, 2, 2;
  ProblemInstance p = problem_with_gradients(grads);
  EXPECT_NEAR(gradient_diversity(p, Weights::Zero(3)), 0.2, 1e-14);
}

TEST(GradientDiversity, OrthogonalGradientsGiveOne) {
  Eigen::MatrixXd grads = 3.0 * Eigen::MatrixXd::Identity(4, 4);
  ProblemInstance p = problem_with_gradients(grads);
  EXPECT_NEAR(gradient_diversity(p, Weights::Zero(4)), 1.0, 1e-14);
}

TEST(GradientDiversity, DirectArithmetic) {
  Eigen::MatrixXd grads(2, 2);
  grads << 1, 0, 1, 1;  // (1+2) / ||(2,1)||^2 = 3/5
  ProblemInstance p = problem_with_gradients(grads);
  EXPECT_NEAR(gradient_diversity(p, Weights::Zero(2)), 0.6, 1e-14);
}

TEST(GradientDiversity, StationaryPointIsSignaled) {
  ProblemInstance p = make_least_squares(gen_linear_data(20, 3, NoiseRule::Zero, 0.0, 7));
  EXPECT_THROW(gradient_diversity(p, p.data.true_weights), StationaryPointError);
}

TEST(GradientDiversity, IdentityWithMSquaredRoute) {
  ProblemInstance p =
      make_multiclass_logistic(gen_multiclass_data(60, 5, 3, 2.0, 9, 0.0));
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    const Weights w = random_weights(p, rng, 0.4);
    const double via_definition = gradient_diversity(p, w);
    const double via_identity =
        m_squared(p, w) /
        (static_cast<double>(p.n_train()) * grad_full(p, w).squaredNorm());
    ASSERT_LE(std::abs(via_definition - via_identity), 1e-12 * via_identity);
  }
}

TEST(VarianceClosedForm, TwoExampleEnumeration) {
  // batch of 1 from gradients (1,0) and (0,1): exact enumeration over the two
  // equally likely draws gives ||g1 - g2||^2 / 4 = 0.5
  Eigen::MatrixXd grads(2, 2);
  grads << 1, 0, 0, 1;
  ProblemInstance p = problem_with_gradients(grads);
  EXPECT_NEAR(minibatch_variance_closed_form(p, Weights::Zero(2), 1), 0.5, 1e-14);
}

TEST(VarianceClosedForm, ScalesAsOneOverB) {
  ProblemInstance p = make_least_squares(gen_linear_data(40, 4, NoiseRule::Unit, 0.0, 11));
  const Weights w = Weights::Zero(p.param_count());
  const double b1 = minibatch_variance_closed_form(p, w, 1);
  const double b10 = minibatch_variance_closed_form(p, w, 10);
  EXPECT_NEAR(b10, b1 / 10.0, 1e-14 * b1);
}

TEST(VarianceClosedForm, EqualGradientsGiveZero) {
  Eigen::MatrixXd grads(3, 2);
  for (int i = 0; i < 3; ++i) grads.row(i) << 2, -1;
  ProblemInstance p = problem_with_gradients(grads);
  EXPECT_NEAR(minibatch_variance_closed_form(p, Weights::Zero(2), 4), 0.0, 1e-14);
}

TEST(VarianceMc, MatchesEnumerationOracle) {
  Eigen::MatrixXd grads(2, 2);
  grads << 1, 0, 0, 1;
  ProblemInstance p = problem_with_gradients(grads);
  const VarianceReport rep =
      minibatch_variance_mc(p, Weights::Zero(2), 1, 10000, 13);
  EXPECT_NEAR(rep.closed_form, 0.5, 1e-14);
  EXPECT_LE(std::abs(rep.empirical - rep.closed_form), 4.0 * rep.std_err);
}

TEST(VarianceMc, FullBatchSanityModeIsZero) {
  ProblemInstance p = make_least_squares(gen_linear_data(25, 3, NoiseRule::Unit, 0.0, 15));
  const VarianceReport rep =
      minibatch_variance_mc(p, Weights::Zero(p.param_count()), p.n_train(), 200, 1);
  EXPECT_DOUBLE_EQ(rep.empirical, 0.0);
}

TEST(VarianceMc, VarianceCeilingPlugIn) {
  EXPECT_DOUBLE_EQ(adaptive_variance_bound(2.0, 4.0, 8.0), 1.0);
}

TEST(VarianceMc, WithinFourStandardErrorsAcrossKindsAndBatches) {
  struct Case {
    ProblemInstance p;
    double scale;
  };
  std::vector<Case> cases;
  cases.push_back({make_least_squares(gen_linear_data(50, 4, NoiseRule::Unit, 0.0, 21)), 1.0});
  cases.push_back({make_linear_net(gen_linear_data(40, 3, NoiseRule::Unit, 0.0, 22)), 0.5});
  cases.push_back(
      {make_multiclass_logistic(gen_multiclass_data(60, 4, 3, 2.0, 23, 0.0)), 0.4});
  Rng rng(24);
  for (auto& [p, scale] : cases) {
    for (int wi = 0; wi < 3; ++wi) {
      const Weights w = random_weights(p, rng, scale);
      for (Count batch : {1, 4, 16}) {
        const VarianceReport rep = minibatch_variance_mc(p, w, batch, 4000, 1000 + wi);
        ASSERT_LE(std::abs(rep.empirical - rep.closed_form),
                  4.0 * std::max(rep.std_err, 1e-12))
            << to_string(p.kind) << " B=" << batch;
      }
    }
  }
}

TEST(DiversityBounds, PlugInValues) {
  ProblemConstants constants;
  constants.m_l_sq = 1.0;
  constants.m_u_sq = 4.0;
  constants.alpha = 1.0;
  constants.beta = 1.0;
  const DiversityBounds b = diversity_bounds(constants, 4, 2.0, 1.0);
  EXPECT_DOUBLE_EQ(b.lower, 0.125);
  EXPECT_DOUBLE_EQ(b.upper_sc, 0.5);
  EXPECT_DOUBLE_EQ(b.upper_pl, 0.5);
}

TEST(QuadraticConstants, IdentityDesign) {
  Dataset ds;
  ds.x_train = Eigen::MatrixXd::Identity(6, 6);
  ds.y_train = Eigen::VectorXd::LinSpaced(6, 1.0, 6.0);
  ProblemInstance p = make_least_squares(std::move(ds));
  const ProblemConstants c = quadratic_constants(p);
  EXPECT_NEAR(c.alpha, 2.0 / 6.0, 1e-12);
  EXPECT_NEAR(c.beta, 2.0 / 6.0, 1e-12);
  EXPECT_NEAR(c.kappa, 1.0, 1e-9);
}

TEST(QuadraticConstants, DecayShiftsSpectrumExactly) {
  ProblemInstance p = make_least_squares(gen_linear_data(80, 6, NoiseRule::Unit, 0.0, 31));
  const ProblemConstants plain = quadratic_constants(p);
  p.weight_decay = 0.25;
  const ProblemConstants ridged = quadratic_constants(p);
  EXPECT_NEAR(ridged.alpha, plain.alpha + 0.25, 1e-10);
  EXPECT_NEAR(ridged.beta, plain.beta + 0.25, 1e-10);
}

TEST(QuadraticConstants, PlInequalityAtRandomWeights) {
  ProblemInstance p = make_least_squares(gen_linear_data(50, 5, NoiseRule::Unit, 0.0, 33));
  const ProblemConstants c = quadratic_constants(p);
  Rng rng(34);
  for (int t = 0; t < 100; ++t) {
    const Weights w = random_weights(p, rng, 2.0);
    const double lhs = 0.5 * grad_full(p, w).squaredNorm();
    const double rhs = c.alpha * (loss_full(p, w) - c.f_star);
    ASSERT_GE(lhs, rhs - 1e-9 * (1.0 + std::abs(rhs)));
  }
}

TEST(QuadraticConstants, RejectsNonQuadraticProblems) {
  ProblemInstance p = make_linear_net(gen_linear_data(20, 3, NoiseRule::Unit, 0.0, 35));
  EXPECT_THROW(quadratic_constants(p), ConfigError);
}

TEST(Budget, PlugInValues) {
  EXPECT_NEAR(gradient_computation_budget(FnClass::PL, 1.0, 1.0, 0.1),
              4.0 * std::log(10.0) / 0.1, 1e-9);
  EXPECT_NEAR(gradient_computation_budget(FnClass::Convex, 1.0, 1.0, 0.1), 400.0, 1e-9);
  EXPECT_NEAR(gradient_computation_budget(FnClass::Smooth, 2.0, 3.0, 0.5), 192.0, 1e-9);
  EXPECT_NEAR(example_count_bound(2, 8.0, 10, 0.1), 6400.0, 1e-9);
}

TEST(Budget, RejectsNonPositiveEps) {
  EXPECT_THROW(gradient_computation_budget(FnClass::PL, 1.0, 1.0, 0.0), ConfigError);
  EXPECT_THROW(example_count_bound(1, 1.0, 1, -0.1), ConfigError);
}

TEST(BoundsAlongRun, AdaLossQuadraticSatisfiesDiversityBounds) {
  // light version of the acceptance criterion-5 check
  ProblemInstance p = make_least_squares(gen_linear_data(80, 5, NoiseRule::Unit, 0.0, 41));
  const ProblemConstants constants = quadratic_constants(p);

  struct Snap {
    double m_sq, grad_norm_sq, loss, dist_sq;
  };
  std::vector<Snap> snaps;
  RunOptions opts;
  opts.policy.kind = ScheduleKind::AdaLoss;
  opts.policy.b0 = 8;
  opts.policy.f_star = constants.f_star;
  opts.lr.kind = LrKind::Prescribed;
  opts.lr.fn_class = FnClass::PL;
  opts.alpha = constants.alpha;
  opts.beta = constants.beta;
  opts.stop.max_updates = 25;
  opts.observer = [&](const TraceRecord&, const Weights& w) {
    snaps.push_back({m_squared(p, w), grad_full(p, w).squaredNorm(), loss_full(p, w),
                     (w - constants.w_star).squaredNorm()});
  };
  run(p, opts);

  double m_l_sq = std::numeric_limits<double>::infinity(), m_u_sq = 0.0;
  for (const Snap& s : snaps) {
    m_l_sq = std::min(m_l_sq, s.m_sq);
    m_u_sq = std::max(m_u_sq, s.m_sq);
  }
  ProblemConstants cs = constants;
  cs.m_l_sq = m_l_sq;
  cs.m_u_sq = m_u_sq;

  int violations = 0;
  for (const Snap& s : snaps) {
    if (s.grad_norm_sq < 1e-20) continue;  // stationary record
    const double gap = s.loss - constants.f_star;
    if (gap <= 0.0 || s.dist_sq <= 0.0) continue;
    const double diversity =
        s.m_sq / (static_cast<double>(p.n_train()) * s.grad_norm_sq);
    const DiversityBounds b = diversity_bounds(cs, p.n_train(), s.dist_sq, gap);
    if (diversity < b.lower * (1.0 - 1e-9)) ++violations;
    if (diversity > b.upper_sc * (1.0 + 1e-9)) ++violations;
    if (diversity > b.upper_pl * (1.0 + 1e-9)) ++violations;
  }
  EXPECT_EQ(violations, 0);
  EXPECT_GE(static_cast<int>(snaps.size()), 20);
}

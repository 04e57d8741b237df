#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "matopt/verify.hpp"
#include "test_util.hpp"

using namespace matopt;

namespace {

MatrixGaussianModel zero_noise(Matrix mean) {
  const std::size_t m = mean.rows(), n = mean.cols();
  return MatrixGaussianModel{std::move(mean), Matrix(m, m), Matrix(n, n)};
}

}  // namespace

TEST(Report, PassedIffWithinTolerance) {
  EXPECT_TRUE(make_report("x", 1e-9, 1e-8).passed);
  EXPECT_TRUE(make_report("x", 1e-8, 1e-8).passed);
  EXPECT_FALSE(make_report("x", 2e-8, 1e-8).passed);
  EXPECT_FALSE(make_report("x", std::nan(""), 1.0).passed);
}

TEST(ElementwiseAdaptation, UnitNoiseGivesHalf) {
  EXPECT_TRUE(oracle_elementwise_adaptation({1.0}, {1.0}).passed);
  const double g = detail::minimize_scalar([](double x) { return 2 * x * x - 2 * x + 1; }, -0.5, 1.5);
  EXPECT_NEAR(g, 0.5, 1e-7);
}

TEST(ElementwiseAdaptation, NoiselessGivesOne) {
  const auto r = oracle_elementwise_adaptation({1.5, -0.3}, {0.0, 0.0});
  EXPECT_TRUE(r.passed) << r.details;
}

TEST(ElementwiseAdaptation, SignFactorMatchesNormalCdf) {
  EXPECT_NEAR(detail::expected_sign(1.0, 1.0), 0.682689492137086, 1e-10);
  EXPECT_NEAR(detail::expected_sign(-1.0, 1.0), -0.682689492137086, 1e-10);
  EXPECT_NEAR(detail::expected_sign(0.0, 3.0), 0.0, 1e-12);
  const auto r = oracle_elementwise_adaptation({1.0}, {1.0});
  EXPECT_LT(r.max_error, 1e-6);
}

TEST(ElementwiseAdaptation, RandomBatchAndMutation) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::vector<double> mu, sd;
  for (int i = 0; i < 20; ++i) {
    mu.push_back(nd(rng));
    sd.push_back(std::abs(nd(rng)) + 0.1);
  }
  EXPECT_TRUE(oracle_elementwise_adaptation(mu, sd).passed);
  EXPECT_FALSE(oracle_elementwise_adaptation(mu, sd, 1.05).passed);
}

TEST(SignScaling, Examples) {
  EXPECT_TRUE(oracle_sign_scaling({1.0}, {1.0}).passed);
  EXPECT_TRUE(oracle_sign_scaling({2.0}, {0.0}).passed);
  const double g = detail::minimize_scalar([](double x) { return 4 * x * x - 4 * x + 1; }, -0.5, 1.5);
  EXPECT_NEAR(g, 0.5, 1e-7);
}

TEST(SignScaling, RandomBatchAndMutation) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  std::vector<double> mu, sd;
  for (int i = 0; i < 20; ++i) {
    mu.push_back(3 * nd(rng));
    sd.push_back(std::abs(nd(rng)));
  }
  const auto r = oracle_sign_scaling(mu, sd);
  EXPECT_TRUE(r.passed) << r.max_error;
  EXPECT_FALSE(oracle_sign_scaling(mu, sd, 1.05).passed);
}

TEST(MatrixAdaptation, ZeroNoiseSquareIsInverseRoot) {
  std::mt19937_64 rng(5);
  const Matrix th = testutil::random_conditioned(rng, 3, 3, 5.0);
  const auto model = zero_noise(th);
  const Matrix a = matrix_adaptation_left_closed_form(model);
  EXPECT_LT(max_abs_diff(a, testutil::eigen_inverse_root(gram_rows(th), 0.0, 0.5)), 1e-10);
  EXPECT_LT(max_abs_diff(a * th, testutil::eigen_polar(th)), 1e-10);
  EXPECT_TRUE(oracle_matrix_adaptation(model).passed);
}

TEST(MatrixAdaptation, IsotropicNoiseClosedForm) {
  std::mt19937_64 rng(6);
  const Matrix th = testutil::random_matrix(rng, 3, 4);
  const double c = 0.4;
  const auto model = isotropic_model(th, std::sqrt(c));  // vec(G) covariance c I
  const Eigen::MatrixXd t = testutil::to_eigen(th);
  const Eigen::MatrixXd tt = t * t.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tt);
  const Eigen::MatrixXd root = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  const Eigen::MatrixXd expect = root * (tt + c * 4.0 * Eigen::MatrixXd::Identity(3, 3)).inverse();
  EXPECT_LT(max_abs_diff(matrix_adaptation_left_closed_form(model), testutil::from_eigen(expect)), 1e-10);
  EXPECT_TRUE(oracle_matrix_adaptation(model).passed);
}

TEST(MatrixAdaptation, RandomModelsAndMutation) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto model = random_model(seed, 3, 4, 8.0, 0.3);
    const auto r = oracle_matrix_adaptation(model);
    EXPECT_TRUE(r.passed) << r.details;
    EXPECT_FALSE(oracle_matrix_adaptation(model, 1.05).passed);
  }
}

TEST(MatrixAdaptation, DescentHitsIterationCap) {
  const auto model = random_model(1, 3, 4, 8.0, 0.3);
  EXPECT_THROW(
      {
        try {
          oracle_matrix_adaptation(model, 1.0, 2);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::NotConverged);
          throw;
        }
      },
      Error);
}

TEST(Whitening, IsotropicZeroMeanGivesScalarFamily) {
  const std::size_t n = 4;
  const auto model = isotropic_model(Matrix(n, n), 1.0);
  const auto sol = whitening_solution(model);
  EXPECT_LT(max_abs_diff(sol.a * sol.b, Matrix::identity(n) * (1.0 / std::sqrt(double(n)))), 1e-12);
  EXPECT_EQ(sol.iterations, 1u);
  const auto r = check_whitening(model);
  EXPECT_TRUE(r.passed) << r.details;
}

TEST(Whitening, AlreadyWhiteScaledInput) {
  // A = B = n^{-1/4} I whitens; the solver lands on the same product in one pass.
  const std::size_t n = 3;
  const auto model = isotropic_model(Matrix(n, n), 1.0);
  const double q = std::pow(double(n), -0.25);
  const Matrix a = Matrix::identity(n) * q;
  const Matrix row = a * matrix_gaussian_moments(model, a * a, MomentSide::Left) * a;
  EXPECT_LT(max_abs_diff(row, Matrix::identity(n)), 1e-14);
  const auto sol = whitening_solution(model);
  EXPECT_EQ(sol.iterations, 1u);
  EXPECT_LT(max_abs_diff(sol.a * sol.b, a * a), 1e-14);
}

TEST(Whitening, RandomSquareCenteredAndUncentered) {
  for (bool centered : {false, true}) {
    const auto model = random_model(11, 4, 4, 10.0, 0.5);
    const auto r = check_whitening(model, 1000, centered);
    EXPECT_TRUE(r.passed) << r.details;
    EXPECT_FALSE(check_whitening(model, 1000, centered, 1.05).passed);
  }
}

TEST(Whitening, RectangularReportsInfeasibility) {
  const auto model = random_model(12, 3, 5, 10.0, 0.5);
  const auto r = check_whitening(model);
  EXPECT_TRUE(r.passed) << r.details;
  EXPECT_NE(r.details.find("infeasible"), std::string::npos);
  const auto sol = whitening_solution(model);
  EXPECT_FALSE(sol.square);
  EXPECT_NEAR(trace(sol.left_factor) / 3.0, trace(sol.right_factor) / 5.0, 1e-12);
  EXPECT_FALSE(check_whitening(model, 1000, false, 1.05).passed);
}

TEST(IdealizedKl, NoiselessDiagonalGivesIdentity) {
  const Matrix th = Matrix::diagonal({1.0, 4.0, 9.0});
  const auto r = solve_idealized_kl({zero_noise(th)}, 0.9);
  EXPECT_TRUE(r.passed) << r.details;
  const auto sol = whitening_solution(zero_noise(th));
  EXPECT_LT(max_abs_diff(sol.a * th * sol.b, Matrix::identity(3)), 1e-10);
}

TEST(IdealizedKl, SingleModelMatchesWhitening) {
  const auto model = random_model(13, 3, 3, 5.0, 0.4);
  const auto kl = solve_idealized_kl({model}, 0.7);
  const auto wh = check_whitening(model);
  EXPECT_TRUE(kl.passed);
  EXPECT_TRUE(wh.passed);
  EXPECT_EQ(ema_weights(1, 0.7), std::vector<double>{1.0});
}

TEST(IdealizedKl, TwoModelsConverge) {
  const auto r = solve_idealized_kl({random_model(14, 4, 4, 5.0, 0.5), random_model(15, 4, 4, 20.0, 0.1)}, 0.5);
  EXPECT_TRUE(r.passed) << r.details;
  EXPECT_FALSE(
      solve_idealized_kl({random_model(14, 4, 4, 5.0, 0.5), random_model(15, 4, 4, 20.0, 0.1)}, 0.5, 500, 1.05).passed);
}

TEST(IdealizedKl, EmaWeights) {
  const auto w = ema_weights(3, 0.5);
  EXPECT_NEAR(w[0], 0.125 / 0.875, 1e-15);
  EXPECT_NEAR(w[2], 0.5 / 0.875, 1e-15);
  EXPECT_THROW(ema_weights(2, 1.0), Error);
}

TEST(InstantaneousKl, ScalarRecursionValues) {
  const auto xs = scalar_kl_recursion(2.0, 0.5, 1.0, 3);
  EXPECT_DOUBLE_EQ(xs[1], 2.5);
  EXPECT_DOUBLE_EQ(xs[2], 2.05);
  EXPECT_NEAR(xs[3], 2.000609756097561, 1e-12);
}

TEST(InstantaneousKl, DegenerateEmaStays) {
  const auto xs = scalar_kl_recursion(2.0, 1.0, 1.0, 50);
  for (double x : xs) EXPECT_EQ(x, 1.0);
  EXPECT_EQ(iterations_to_converge(xs, 2.0, 1e-12), -1);
}

TEST(InstantaneousKl, NewtonRateFromWideStarts) {
  for (double sigma : {0.01, 1.0, 2.0, 300.0})
    for (int k = 0; k <= 40; ++k) {
      const double x0 = sigma * std::pow(10.0, -1.0 + k / 20.0);
      const auto xs = scalar_kl_recursion(sigma, 0.5, x0, 8);
      const long it = iterations_to_converge(xs, sigma, 1e-12 * std::max(1.0, sigma));
      EXPECT_GE(it, 0) << sigma << " " << x0;
      EXPECT_LE(it, 8);
    }
}

TEST(InstantaneousKl, LinearRateForOtherBetas) {
  for (double b : {0.1, 0.3, 0.8, 0.95}) {
    const auto xs = scalar_kl_recursion(3.0, b, 0.5, 2000);
    EXPECT_NEAR(xs.back(), 3.0, 1e-12) << b;
  }
}

TEST(InstantaneousKl, MatrixIterationGivesPolar) {
  std::mt19937_64 rng(16);
  for (double b : {0.3, 0.5, 0.8}) {
    const Matrix g = testutil::random_conditioned(rng, 4, 4, 20.0);
    const auto r = instantaneous_kl(g, b, 1.0, 200);
    EXPECT_TRUE(r.passed) << r.details;
    EXPECT_FALSE(instantaneous_kl(g, b, 1.0, 200, 1.05).passed);
  }
}

TEST(InstantaneousKl, ScaleOfInitDoesNotMatter) {
  std::mt19937_64 rng(17);
  const Matrix g = testutil::random_conditioned(rng, 3, 3, 5.0);
  for (double c : {0.01, 1.0, 50.0}) EXPECT_TRUE(instantaneous_kl(g, 0.5, c, 200).passed) << c;
  EXPECT_THROW(instantaneous_kl(g, 0.5, 0.0, 10), Error);
}

TEST(OptimizerEquivalence, AllPairsWithinTolerance) {
  const auto stream = gradient_stream(7, 100);
  for (const auto& pair : equivalence_pairs()) EXPECT_LE(equivalence_deviation(pair, stream), 1e-12) << pair.name;
  const auto r = check_optimizer_equivalences(7, 100);
  EXPECT_TRUE(r.passed) << r.details;
}

TEST(OptimizerEquivalence, MutationNamesMismatchingCells) {
  const auto r = check_optimizer_equivalences(7, 20, 1.05);
  EXPECT_FALSE(r.passed);
  EXPECT_NE(r.details.find("muon_svd"), std::string::npos);
}

TEST(OptimizerEquivalence, StreamIsSeeded) {
  EXPECT_EQ(gradient_stream(1, 3)[2], gradient_stream(1, 3)[2]);
  EXPECT_FALSE(gradient_stream(1, 3)[2] == gradient_stream(2, 3)[2]);
}

TEST(ExponentParadox, DiagonalExample) {
  const Matrix g = Matrix::diagonal({2.0, 4.0});
  EXPECT_LT(max_abs_diff(detail::one_step_shampoo(g, 0.5), Matrix::diagonal({0.5, 0.25})), 1e-14);
  EXPECT_TRUE(check_exponent_paradox(g).passed);
}

TEST(ExponentParadox, DegreeMinusOneHomogeneity) {
  std::mt19937_64 rng(18);
  const Matrix g = testutil::random_conditioned(rng, 4, 3, 10.0);
  const Matrix u1 = detail::one_step_shampoo(g, 0.5);
  const Matrix u3 = detail::one_step_shampoo(g * 3.0, 0.5);
  EXPECT_LT(max_abs_diff(u3, u1 * (1.0 / 3.0)), 1e-12);
}

TEST(ExponentParadox, RandomRectangularAgainstEigen) {
  std::mt19937_64 rng(19);
  const Matrix g = testutil::random_conditioned(rng, 5, 3, 20.0);
  const Eigen::MatrixXd pinv = testutil::to_eigen(g).completeOrthogonalDecomposition().pseudoInverse();
  EXPECT_LT(max_abs_diff(detail::one_step_shampoo(g, 0.5), testutil::from_eigen(pinv.transpose())), 1e-10);
  EXPECT_TRUE(check_exponent_paradox(g).passed);
  EXPECT_FALSE(check_exponent_paradox(g, 1.05).passed);
}

TEST(ExponentParadox, RankDeficientThrows) {
  const Matrix g{{1.0, 2.0}, {2.0, 4.0}};
  try {
    check_exponent_paradox(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficient);
  }
}

TEST(AdaptedNorm, DeterministicGradientIsSign) {
  const Matrix th{{1.5, -0.2, 3.0}, {-4.0, 0.7, -0.1}};
  const Matrix d = adapted_elementwise_direction(zero_noise(th), th);
  for (std::size_t i = 0; i < th.size(); ++i) EXPECT_DOUBLE_EQ(d.data()[i], th.data()[i] > 0 ? -1.0 : 1.0);
}

TEST(AdaptedNorm, DeterministicFullRankIsNegativePolar) {
  std::mt19937_64 rng(20);
  const Matrix th = testutil::random_conditioned(rng, 3, 3, 4.0);
  const Matrix d = adapted_left_direction(zero_noise(th), th);
  EXPECT_LT(max_abs_diff(d, -testutil::eigen_polar(th)), 1e-10);
}

TEST(AdaptedNorm, GaussianCoordinate) {
  // mu = 1, sigma = 2: E[g^2] = 5
  const MatrixGaussianModel model{Matrix{{1.0}}, Matrix{{2.0}}, Matrix{{1.0}}};
  EXPECT_NEAR(adapted_elementwise_direction(model, Matrix{{3.0}})(0, 0), -3.0 / std::sqrt(5.0), 1e-15);
  EXPECT_TRUE(check_adapted_norm_descent(model).passed);
}

TEST(AdaptedNorm, RandomModelsAndMutation) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto model = random_model(30 + s, 3, 4, 5.0, 0.6);
    const auto r = check_adapted_norm_descent(model, s);
    EXPECT_TRUE(r.passed) << r.details;
    EXPECT_NE(r.details.find("0 of 100"), std::string::npos);
    EXPECT_FALSE(check_adapted_norm_descent(model, s, 100, 1.05).passed);
  }
}

TEST(Kron, IdentityFactors) {
  std::mt19937_64 rng(21);
  const Matrix m = testutil::random_matrix(rng, 3, 4);
  PreconditionerState s;
  s.factors = FactorPair{Matrix::identity(3), Matrix::identity(4), 1};
  EXPECT_LT(max_abs_diff(precondition(PreconditionerKind::TwoSided, s, m, 0.25, 0.0), m), 1e-14);
  EXPECT_TRUE(check_kron_equivalence(Matrix::identity(3), Matrix::identity(4), m, 0.25, 0.0).passed);
}

TEST(Kron, DiagonalFactorsElementwise) {
  std::mt19937_64 rng(22);
  const Matrix m = testutil::random_matrix(rng, 2, 3);
  const std::vector<double> l{1.0, 4.0}, r{2.0, 0.5, 3.0};
  PreconditionerState s;
  s.factors = FactorPair{Matrix::diagonal(l), Matrix::diagonal(r), 1};
  const Matrix out = precondition(PreconditionerKind::TwoSided, s, m, 0.5, 0.0);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out(i, j), m(i, j) / std::sqrt(l[i] * r[j]), 1e-14);
  EXPECT_TRUE(check_kron_equivalence(Matrix::diagonal(l), Matrix::diagonal(r), m, 0.5, 0.0).passed);
}

TEST(Kron, RandomSpdWithDamping) {
  std::mt19937_64 rng(23);
  for (double p : {0.25, 0.5})
    for (double eps : {0.0, 1e-4, 0.1}) {
      const Matrix l = testutil::random_spd(rng, 3), r = testutil::random_spd(rng, 4);
      const Matrix m = testutil::random_matrix(rng, 3, 4);
      EXPECT_TRUE(check_kron_equivalence(l, r, m, p, eps).passed) << p << " " << eps;
      EXPECT_FALSE(check_kron_equivalence(l, r, m, p, eps, 1.05).passed);
    }
}

TEST(Kron, ShapeMismatchThrows) {
  try {
    check_kron_equivalence(Matrix::identity(3), Matrix::identity(3), Matrix(3, 4), 0.5, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Identities, ShampooQuarterAndDecomposition) {
  std::mt19937_64 rng(24);
  const Matrix g = testutil::random_conditioned(rng, 6, 4, 100.0);
  EXPECT_TRUE(check_shampoo_polar(g).passed);
  EXPECT_FALSE(check_shampoo_polar(g, 1.05).passed);
  const Matrix l = testutil::random_spd(rng, 6), r = testutil::random_spd(rng, 4);
  EXPECT_TRUE(check_decomposition(g, l, r, 0.25).passed);
  EXPECT_FALSE(check_decomposition(g, l, r, 0.5, 1.05).passed);
}

TEST(Suites, AllPassAndAllMutationsFail) {
  const auto good = run_suite(Suite::All, 5);
  EXPECT_EQ(good.size(), 14u);
  for (const auto& r : good) EXPECT_TRUE(r.passed) << r.check_name << ": " << r.details;
  for (const auto& r : run_suite(Suite::All, 5, 1.05)) EXPECT_FALSE(r.passed) << r.check_name;
}

TEST(Suites, ParseNames) {
  EXPECT_EQ(parse_suite("table1"), Suite::Table1);
  EXPECT_EQ(run_suite(Suite::Linalg, 1).size(), 4u);
  EXPECT_THROW(parse_suite("nope"), Error);
}

#include <gtest/gtest.h>

#include <random>

#include "matopt/optim.hpp"
#include "test_util.hpp"

using namespace matopt;
using testutil::random_matrix;

namespace {

OptimizerSpec plain(Family f) {
  OptimizerSpec s;
  s.family = f;
  s.beta1 = 0.0;
  s.beta2 = 0.0;
  s.beta3 = 0.0;
  s.epsilon = 0.0;
  return s;
}

Matrix row(std::initializer_list<double> xs) { return Matrix{xs}; }

}  // namespace

TEST(Ema, Examples) {
  Matrix x = row({1.0, 2.0});
  EXPECT_EQ(ema_update(row({5, 5}), x, 0.0), x);
  EXPECT_NEAR(ema_update(Matrix{{0.0}}, Matrix{{1.0}}, 0.9)(0, 0), 0.1, 1e-16);
  Matrix b(1, 1);
  const double xs[3] = {1.0, -2.0, 4.0};
  for (double v : xs) b = ema_update(b, Matrix{{v}}, 0.7);
  EXPECT_NEAR(b(0, 0), 0.3 * (0.49 * 1.0 + 0.7 * -2.0 + 4.0), 1e-15);
}

TEST(BiasCorrection, Examples) {
  EXPECT_NEAR(bias_corrected(Matrix{{0.1}}, 0.9, 1, true)(0, 0), 1.0, 1e-15);
  EXPECT_EQ(bias_corrected(Matrix{{0.1}}, 0.9, 1, false)(0, 0), 0.1);
  EXPECT_NEAR(bias_corrected(Matrix{{0.875}}, 0.5, 3, true)(0, 0), 1.0, 1e-15);
}

TEST(AdamDirection, Examples) {
  EXPECT_EQ(adam_direction(row({1, -2}), row({1, 4}), 0.0), row({1, -1}));
  EXPECT_NEAR(adam_direction(Matrix{{1.0}}, Matrix{{0.0}}, 1e-8)(0, 0), 1e8, 1e-4);
  std::mt19937_64 rng(1);
  Matrix m = random_matrix(rng, 3, 4);
  Matrix r = random_matrix(rng, 3, 4);
  Matrix v = hadamard(r, r);
  Matrix out = adam_direction(m, v, 1e-3);
  for (std::size_t k = 0; k < m.size(); ++k) {
    EXPECT_NEAR(out.data()[k], m.data()[k] / (std::sqrt(v.data()[k]) + 1e-3), 1e-15 * std::abs(out.data()[k]));
  }
}

TEST(SignDirection, Examples) {
  EXPECT_EQ(sign_direction(row({1.5, -0.2, 0})), row({1, -1, 0}));
  Matrix s = sign_direction(row({3, -4, 0, 1e-300}));
  EXPECT_EQ(sign_direction(s), s);
  std::mt19937_64 rng(2);
  Matrix m = random_matrix(rng, 4, 4);
  EXPECT_EQ(adam_direction(m, hadamard(m, m), 0.0), sign_direction(m));
}

TEST(SpectralDirection, ScaleEquivariant) {
  std::mt19937_64 rng(3);
  Matrix m = random_matrix(rng, 5, 3);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    EXPECT_LE(max_abs_diff(spectral_direction(c * m), spectral_direction(m)), 1e-12);
  }
}

TEST(AdamDecompose, Examples) {
  AdamDecomposition d = adam_decompose(row({1, -2}), row({4, 4}));
  EXPECT_EQ(d.adaptation, row({0.5, 1}));
  EXPECT_EQ(d.sign, row({1, -1}));
  Matrix m = row({0.3, -5, 2});
  AdamDecomposition e = adam_decompose(m, hadamard(m, m));
  for (double x : e.adaptation.data()) EXPECT_NEAR(x, 1.0, 1e-15);
  try {
    adam_decompose(row({1}), row({0}));
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::ZeroVariance);
  }
}

TEST(AdamDecompose, FormsAgree) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  Matrix m = random_matrix(rng, 4, 5);
  Matrix v(4, 5);
  for (std::size_t k = 0; k < v.size(); ++k) v.data()[k] = m.data()[k] * m.data()[k] + u(rng);
  AdamDecomposition d = adam_decompose(m, v);
  EXPECT_LE(max_abs_diff(d.adaptation, d.adaptation_relvar), 1e-12);
  EXPECT_LE(max_abs_diff(hadamard(d.adaptation, d.sign), adam_direction(m, v, 0.0)), 1e-12);
}

TEST(ShampooDecompose, GramRootFactors) {
  std::mt19937_64 rng(5);
  Matrix m = random_matrix(rng, 3, 3);
  ShampooDecomposition d = shampoo_decompose(m, psd_power(gram_rows(m), 0.5), psd_power(gram_cols(m), 0.5), 0.5);
  EXPECT_LE(max_abs_diff(d.left_adapt, Matrix::identity(3)), 1e-10);
  EXPECT_LE(max_abs_diff(d.right_adapt, Matrix::identity(3)), 1e-10);
  EXPECT_LE(max_abs_diff(d.left_adapt * d.polar * d.right_adapt, polar_svd(m)), 1e-10);
}

TEST(ShampooDecompose, IdentityFactors) {
  std::mt19937_64 rng(6);
  Matrix m = random_matrix(rng, 3, 3);
  ShampooDecomposition d = shampoo_decompose(m, Matrix::identity(3), Matrix::identity(3), 0.25);
  EXPECT_LE(max_abs_diff(d.left_adapt, psd_power(gram_rows(m), 0.25)), 1e-14);
  EXPECT_LE(max_abs_diff(d.left_adapt * d.polar * d.right_adapt, m), 1e-12);
}

TEST(ShampooDecompose, Reconstruction) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix m = random_matrix(rng, 4, 3);
    Matrix l = testutil::random_spd(rng, 4), r = testutil::random_spd(rng, 3);
    ShampooDecomposition d = shampoo_decompose(m, l, r, 0.25);
    Matrix direct = stabilized_inverse_root(l, 0.0, 0.25) * m * stabilized_inverse_root(r, 0.0, 0.25);
    EXPECT_LE(frobenius_distance(d.left_adapt * d.polar * d.right_adapt, direct), 1e-10 * frobenius_norm(direct));
  }
}

TEST(ShampooDecompose, RankDeficient) {
  Matrix m{{1, 2}, {2, 4}};
  try {
    shampoo_decompose(m, Matrix::identity(2), Matrix::identity(2), 0.25);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficient);
  }
}

TEST(GraftAndScale, Examples) {
  OptimizerSpec s;
  s.scaling = Scaling::Graft;
  Matrix dir = row({2, 0});
  Matrix graft = row({0, 3});
  Matrix out = graft_and_scale(dir, s, &graft, 1, 2);
  EXPECT_EQ(out, row({3, 0}));

  s.scaling = Scaling::Classic;
  EXPECT_NEAR(graft_and_scale(Matrix{{1.0}}, s, nullptr, 4, 2)(0, 0), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(graft_and_scale(Matrix{{1.0}}, s, nullptr, 2, 4)(0, 0), 1.0, 1e-15);
  s.scaling = Scaling::Moonlight;
  EXPECT_NEAR(graft_and_scale(Matrix{{1.0}}, s, nullptr, 768, 768)(0, 0), 5.5426, 1e-4);
  s.scaling = Scaling::RmsRms;
  EXPECT_NEAR(graft_and_scale(Matrix{{1.0}}, s, nullptr, 8, 2)(0, 0), 2.0, 1e-15);
  s.scaling = Scaling::Nuclear;
  Matrix src = Matrix::diagonal({3, 4});
  EXPECT_NEAR(graft_and_scale(Matrix::identity(2), s, nullptr, 2, 2, &src)(0, 0), 7.0, 1e-12);
}

TEST(GraftAndScale, ZeroCases) {
  OptimizerSpec s;
  s.scaling = Scaling::Graft;
  Matrix zero(1, 2);
  Matrix graft = row({1, 1});
  try {
    graft_and_scale(zero, s, &graft, 1, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroDirection);
  }
  EXPECT_EQ(graft_and_scale(row({1, 2}), s, &zero, 1, 2), zero);
}

TEST(GraftAndScale, PreservesDirection) {
  std::mt19937_64 rng(8);
  OptimizerSpec s;
  s.scaling = Scaling::Graft;
  for (int trial = 0; trial < 20; ++trial) {
    Matrix d = random_matrix(rng, 3, 4), g = random_matrix(rng, 3, 4);
    Matrix out = graft_and_scale(d, s, &g, 3, 4);
    const double scale = frobenius_norm(g) / frobenius_norm(d);
    EXPECT_LE(max_abs_diff(out, d * scale), 1e-14 * max_abs(out));
    EXPECT_NEAR(frobenius_norm(out), frobenius_norm(g), 1e-12);
  }
}

TEST(Validate, Rules) {
  OptimizerSpec s;
  s.wiring = Wiring::LaProp;
  EXPECT_THROW(validate(s), Error);
  s.beta1 = 0.0;
  EXPECT_NO_THROW(validate(s));
  s = OptimizerSpec{};
  s.family = Family::SpectralGD;
  s.wiring = Wiring::BCOSm;
  EXPECT_THROW(validate(s), Error);
  s = OptimizerSpec{};
  s.scaling = Scaling::Graft;
  s.graft.family = Family::Shampoo;
  EXPECT_THROW(validate(s), Error);
  s = OptimizerSpec{};
  s.beta2 = 0.0;
  EXPECT_EQ(validate(s).size(), 1u);
  s.beta1 = 1.0;
  EXPECT_THROW(validate(s), Error);
}

TEST(Step, SignGdExample) {
  OptimizerSpec s = plain(Family::SignGD);
  OptimizerState st = init_state(s, 1, 2);
  Matrix theta = row({1, -1});
  StepResult r = step(s, st, theta, theta, 0.1);
  EXPECT_EQ(r.theta, row({0.9, -0.9}));
}

TEST(Step, AdamFirstStepIsSign) {
  std::mt19937_64 rng(9);
  OptimizerSpec s;
  s.family = Family::Adam;
  s.epsilon = 0.0;
  OptimizerState st = init_state(s, 3, 3);
  Matrix g = random_matrix(rng, 3, 3);
  StepResult r = step(s, st, Matrix(3, 3), g, 1.0);
  EXPECT_LE(max_abs_diff(r.update, sign_direction(g)), 1e-15);
}

TEST(Step, WeightDecayIsDecoupled) {
  for (Family f : {Family::Adam, Family::SignGD, Family::Shampoo, Family::SpectralGD}) {
    OptimizerSpec s = plain(f);
    s.epsilon = 1e-8;
    s.weight_decay = 0.1;
    OptimizerState st = init_state(s, 2, 2);
    Matrix theta{{1, -2}, {3, 0.5}};
    StepResult r = step(s, st, theta, Matrix(2, 2), 0.01);
    EXPECT_LE(max_abs_diff(r.theta, theta * (1.0 - 0.01 * 0.1)), 1e-16) << to_string(f);
  }
}

TEST(Step, ShampooQuarterTracksSpectralDescent) {
  std::mt19937_64 rng(10);
  OptimizerSpec a = plain(Family::Shampoo);
  OptimizerSpec b = plain(Family::SpectralGD);
  OptimizerState sa = init_state(a, 5, 4), sb = init_state(b, 5, 4);
  Matrix ta = random_matrix(rng, 5, 4), tb = ta;
  for (int t = 0; t < 50; ++t) {
    Matrix g = testutil::random_conditioned(rng, 5, 4, 10.0);
    StepResult ra = step(a, sa, ta, g, 0.01);
    StepResult rb = step(b, sb, tb, g, 0.01);
    EXPECT_LE(max_abs_diff(ra.update, rb.update), 1e-10);
    ta = ra.theta;
    tb = rb.theta;
  }
}

TEST(Step, BcosmShampooIsMuon) {
  std::mt19937_64 rng(11);
  OptimizerSpec a = plain(Family::Shampoo);
  a.wiring = Wiring::BCOSm;
  a.beta1 = 0.9;
  OptimizerSpec b = plain(Family::MuonSVD);
  b.beta1 = 0.9;
  OptimizerState sa = init_state(a, 4, 4), sb = init_state(b, 4, 4);
  Matrix theta(4, 4);
  Matrix mean = testutil::random_conditioned(rng, 4, 4, 2.0);
  for (int t = 0; t < 30; ++t) {
    Matrix g = mean + 0.1 * random_matrix(rng, 4, 4);
    EXPECT_LE(max_abs_diff(step(a, sa, theta, g, 0.1).update, step(b, sb, theta, g, 0.1).update), 1e-12);
  }
}

TEST(Step, LapropSignMomentum) {
  std::mt19937_64 rng(12);
  OptimizerSpec a = plain(Family::Adam);
  a.wiring = Wiring::LaProp;
  a.beta3 = 0.8;
  OptimizerSpec b = plain(Family::SignGD);
  b.beta3 = 0.8;
  OptimizerState sa = init_state(a, 3, 2), sb = init_state(b, 3, 2);
  Matrix theta(3, 2);
  for (int t = 0; t < 20; ++t) {
    Matrix g = random_matrix(rng, 3, 2);
    EXPECT_LE(max_abs_diff(step(a, sa, theta, g, 0.1).update, step(b, sb, theta, g, 0.1).update), 1e-12);
  }
}

TEST(Step, GraftedShampooHasRmspropNorm) {
  std::mt19937_64 rng(13);
  OptimizerSpec a = plain(Family::Shampoo);
  a.p = 0.5;
  a.beta2 = 0.9;
  a.epsilon = 1e-12;
  a.scaling = Scaling::Graft;
  a.graft = GraftSpec{Family::RMSProp, 0.9, 1e-8};
  OptimizerSpec b = plain(Family::RMSProp);
  b.beta2 = 0.9;
  b.epsilon = 1e-8;
  OptimizerState sa = init_state(a, 3, 4), sb = init_state(b, 3, 4);
  Matrix theta(3, 4);
  for (int t = 0; t < 10; ++t) {
    Matrix g = random_matrix(rng, 3, 4);
    StepResult ra = step(a, sa, theta, g, 0.1);
    StepResult rb = step(b, sb, theta, g, 0.1);
    EXPECT_NEAR(frobenius_norm(ra.update), frobenius_norm(rb.update), 1e-12);
  }
}

TEST(Step, PreconditionFrequencyReusesRoots) {
  std::mt19937_64 rng(14);
  OptimizerSpec s = plain(Family::Shampoo);
  s.beta2 = 0.9;
  s.epsilon = 1e-6;
  s.precondition_frequency = 3;
  OptimizerState st = init_state(s, 3, 3);
  Matrix theta(3, 3);
  step(s, st, theta, random_matrix(rng, 3, 3), 0.1);
  const auto roots = st.roots;
  step(s, st, theta, random_matrix(rng, 3, 3), 0.1);
  step(s, st, theta, random_matrix(rng, 3, 3), 0.1);
  EXPECT_EQ(st.roots[0], roots[0]);
  step(s, st, theta, random_matrix(rng, 3, 3), 0.1);
  EXPECT_NE(st.roots[0], roots[0]);
}

TEST(Step, EveryFamilyRuns) {
  std::mt19937_64 rng(15);
  for (Family f : {Family::Adam, Family::Signum, Family::SignGD, Family::RMSProp, Family::SpectralGD,
                   Family::MuonSVD, Family::MuonNS, Family::Shampoo, Family::KlShampoo, Family::EShampoo,
                   Family::CenteredShampoo, Family::OneSidedL, Family::OneSidedR, Family::FullMatrix,
                   Family::OrderN}) {
    OptimizerSpec s;
    s.family = f;
    s.beta2 = 0.95;
    s.epsilon = 1e-8;
    s.scaling = is_elementwise(f) ? Scaling::None : Scaling::Graft;
    OptimizerState st = init_state(s, 4, 6, f == Family::OrderN ? std::vector<std::size_t>{4, 2, 3}
                                                                  : std::vector<std::size_t>{});
    Matrix theta = random_matrix(rng, 4, 6);
    for (int t = 0; t < 5; ++t) {
      StepResult r = step(s, st, theta, random_matrix(rng, 4, 6), 0.01);
      ASSERT_TRUE(all_finite(r.theta)) << to_string(f);
      theta = r.theta;
    }
    EXPECT_EQ(st.step, 5u);
  }
}

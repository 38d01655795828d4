#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "kfdoe/kalman.hpp"

using namespace kfdoe;

namespace {

MatrixXd random_spd(std::mt19937& rng, int n) {
  std::normal_distribution<double> nd;
  MatrixXd L(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) L(i, j) = nd(rng);
  return L * L.transpose() + 0.1 * MatrixXd::Identity(n, n);
}

MatrixXd random_matrix(std::mt19937& rng, int r, int c) {
  std::normal_distribution<double> nd;
  MatrixXd M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = nd(rng);
  return M;
}

double min_eig(const MatrixXd& S) { return Eigen::SelfAdjointEigenSolver<MatrixXd>(S).eigenvalues().minCoeff(); }

ModelParams j2_truth() {
  ModelParams p;
  p.K = 1.0;
  p.G = 0.7;
  p.Y0 = 0.3;
  p.H = 1.0;
  return p;
}

FilterConfig j2_config() {
  FilterConfig cfg;
  cfg.ids = {ParamId::K, ParamId::G, ParamId::Y0, ParamId::H};
  cfg.base = j2_truth();
  return cfg;
}

}  // namespace

TEST(EkfUpdate, ScalarConjugateExample) {
  ParameterBelief b{VectorXd::Zero(1), MatrixXd::Identity(1, 1)};
  const MatrixXd A = MatrixXd::Ones(1, 1);
  const MatrixXd R = 1e-12 * MatrixXd::Identity(1, 1);
  const auto up = ekf_update(b, A, VectorXd::Constant(1, 2.0), R);
  EXPECT_NEAR(up.belief.mu(0), 2.0, 1e-9);
  EXPECT_NEAR(up.belief.Sigma(0, 0), 0.0, 1e-11);
}

TEST(EkfUpdate, ScalarClosedForm) {
  ParameterBelief b{VectorXd::Constant(1, 1.0), MatrixXd::Constant(1, 1, 4.0)};
  const MatrixXd A = MatrixXd::Constant(1, 1, 3.0);
  const MatrixXd R = MatrixXd::Constant(1, 1, 2.0);
  const auto up = ekf_update(b, A, VectorXd::Constant(1, 0.5), R);
  const double s = 9.0 * 4.0 + 2.0;
  EXPECT_NEAR(up.belief.mu(0), 1.0 + 4.0 * 3.0 / s * 0.5, 1e-14);
  EXPECT_NEAR(up.belief.Sigma(0, 0), 4.0 - 16.0 * 9.0 / s, 1e-14);
  EXPECT_NEAR(up.log_likelihood, -0.5 * (0.25 / s + std::log(s) + std::log(2 * std::numbers::pi)), 1e-14);
}

TEST(EkfUpdate, ZeroSensitivityLeavesBeliefUnchanged) {
  std::mt19937 rng(3);
  ParameterBelief b{random_matrix(rng, 4, 1), random_spd(rng, 4)};
  const auto up = ekf_update(b, MatrixXd::Zero(6, 4), random_matrix(rng, 6, 1), 1e-6 * MatrixXd::Identity(6, 6));
  EXPECT_TRUE(up.belief.mu.isApprox(b.mu, 1e-14));
  EXPECT_TRUE(up.belief.Sigma.isApprox(b.Sigma, 1e-12));
}

TEST(EkfUpdate, TraceNonIncreasingAndPsd) {
  std::mt19937 rng(11);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + t % 6, m = 1 + (t / 6) % 6;
    ParameterBelief b{random_matrix(rng, n, 1), random_spd(rng, n)};
    const MatrixXd A = random_matrix(rng, m, n);
    const MatrixXd R = std::pow(10.0, -(t % 8)) * MatrixXd::Identity(m, m);
    const auto up = ekf_update(b, A, random_matrix(rng, m, 1), R);
    EXPECT_LE(up.belief.Sigma.trace(), b.Sigma.trace() * (1 + 1e-12));
    EXPECT_GE(min_eig(up.belief.Sigma), -1e-12);
    EXPECT_LT((up.belief.Sigma - up.belief.Sigma.transpose()).norm(), 1e-14);
  }
}

TEST(EkfUpdate, LogLikelihoodMatchesGaussianDensity) {
  std::mt19937 rng(5);
  ParameterBelief b{random_matrix(rng, 3, 1), random_spd(rng, 3)};
  const MatrixXd A = random_matrix(rng, 2, 3);
  const MatrixXd R = random_spd(rng, 2);
  const VectorXd r = random_matrix(rng, 2, 1);
  const auto up = ekf_update(b, A, r, R);
  const MatrixXd S = A * b.Sigma * A.transpose() + R;
  const double ref = -0.5 * (r.dot(S.inverse() * r) + std::log(S.determinant()) + 2 * std::log(2 * std::numbers::pi));
  EXPECT_NEAR(up.log_likelihood, ref, 1e-12);
}

TEST(EkfUpdate, SequentialEqualsBatchForLinearGaussian) {
  std::mt19937 rng(17);
  const int n = 4;
  ParameterBelief b{random_matrix(rng, n, 1), random_spd(rng, n)};
  const VectorXd theta = random_matrix(rng, n, 1);
  MatrixXd info = b.Sigma.inverse();
  VectorXd lin = info * b.mu;
  ParameterBelief seq = b;
  for (int k = 0; k < 10; ++k) {
    const MatrixXd A = random_matrix(rng, 3, n);
    const MatrixXd R = 0.01 * (k + 1) * MatrixXd::Identity(3, 3);
    const VectorXd y = A * theta + random_matrix(rng, 3, 1) * 0.1;
    seq = ekf_update(seq, A, y - A * seq.mu, R).belief;
    info += A.transpose() * R.inverse() * A;
    lin += A.transpose() * R.inverse() * y;
  }
  const MatrixXd Sigma = info.inverse();
  EXPECT_LT((seq.Sigma - Sigma).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((seq.mu - Sigma * lin).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(EkfUpdate, RejectsBadInput) {
  ParameterBelief b{VectorXd::Zero(2), MatrixXd::Identity(2, 2)};
  const MatrixXd R = MatrixXd::Identity(1, 1);
  EXPECT_THROW(ekf_update(b, MatrixXd::Zero(1, 3), VectorXd::Zero(1), R), FilterError);
  MatrixXd A = MatrixXd::Zero(1, 2);
  A(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(ekf_update(b, A, VectorXd::Zero(1), R), FilterError);
}

TEST(EkfUpdate, SingularResidualCovarianceIsRegularized) {
  ParameterBelief b{VectorXd::Zero(1), MatrixXd::Identity(1, 1)};
  const MatrixXd A = MatrixXd::Ones(2, 1);
  const auto up = ekf_update(b, A, VectorXd::Ones(2), MatrixXd::Zero(2, 2));
  EXPECT_TRUE(up.regularized);
  EXPECT_TRUE(up.belief.mu.allFinite());
  EXPECT_NEAR(up.belief.mu(0), 1.0, 1e-6);
}

TEST(MaskedUpdate, AllOnesEqualsEkf) {
  std::mt19937 rng(2);
  ParameterBelief b{random_matrix(rng, 4, 1), random_spd(rng, 4)};
  const MatrixXd A = random_matrix(rng, 6, 4);
  const VectorXd r = random_matrix(rng, 6, 1);
  const MatrixXd R = 1e-3 * MatrixXd::Identity(6, 6);
  const auto a = ekf_update(b, A, r, R);
  const auto m = masked_update(b, A, r, R, VectorXd::Ones(4));
  EXPECT_EQ(a.belief.mu, m.belief.mu);
  EXPECT_EQ(a.belief.Sigma, m.belief.Sigma);
}

TEST(MaskedUpdate, AllZerosLeavesBeliefUnchanged) {
  std::mt19937 rng(4);
  ParameterBelief b{random_matrix(rng, 3, 1), random_spd(rng, 3)};
  const auto m = masked_update(b, random_matrix(rng, 6, 3), random_matrix(rng, 6, 1), MatrixXd::Identity(6, 6),
                               VectorXd::Zero(3));
  EXPECT_TRUE(m.belief.mu.isApprox(b.mu, 1e-14));
  EXPECT_LT((m.belief.Sigma - b.Sigma).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MaskedUpdate, UncorrelatedBlockEqualsEkfWithMaskedSensitivity) {
  std::mt19937 rng(6);
  ParameterBelief b{random_matrix(rng, 4, 1), MatrixXd::Zero(4, 4)};
  b.Sigma.topLeftCorner(2, 2) = random_spd(rng, 2);
  b.Sigma.bottomRightCorner(2, 2) = random_spd(rng, 2);
  const VectorXd mask = (VectorXd(4) << 1, 1, 0, 0).finished();
  const MatrixXd A = random_matrix(rng, 6, 4);
  const VectorXd r = random_matrix(rng, 6, 1);
  const MatrixXd R = 1e-2 * MatrixXd::Identity(6, 6);
  const auto m = masked_update(b, A, r, R, mask);
  const auto ref = ekf_update(b, A * mask.asDiagonal(), r, R);
  EXPECT_TRUE(m.belief.mu.isApprox(ref.belief.mu, 1e-14));
  EXPECT_TRUE(m.belief.Sigma.isApprox(ref.belief.Sigma, 1e-14));
  EXPECT_EQ(m.belief.mu.tail(2), b.mu.tail(2));
  EXPECT_LT((m.belief.Sigma.bottomRightCorner(2, 2) - b.Sigma.bottomRightCorner(2, 2)).norm(), 1e-14);
}

TEST(MaskedUpdate, CorrelatedMaskedEntriesStayFrozen) {
  std::mt19937 rng(8);
  for (int t = 0; t < 50; ++t) {
    ParameterBelief b{random_matrix(rng, 4, 1), random_spd(rng, 4)};
    const VectorXd mask = (VectorXd(4) << 1, 0, 1, 0).finished();
    const auto m = masked_update(b, random_matrix(rng, 6, 4), random_matrix(rng, 6, 1),
                                 1e-2 * MatrixXd::Identity(6, 6), mask);
    EXPECT_EQ(m.belief.mu(1), b.mu(1));
    EXPECT_EQ(m.belief.mu(3), b.mu(3));
    EXPECT_NEAR(m.belief.Sigma(1, 1), b.Sigma(1, 1), 1e-10 * b.Sigma(1, 1));
    EXPECT_GE(min_eig(m.belief.Sigma), -1e-12);
  }
}

TEST(UpdateMask, StationaryMeanWithShrinkingVarianceIsMasked) {
  std::deque<VectorXd> mu(5, VectorXd::Constant(2, 1.0));
  std::deque<VectorXd> var{VectorXd::Constant(2, 0.2), VectorXd::Constant(2, 0.1)};
  const VectorXd prior = VectorXd::Constant(2, 1.0);
  const VectorXd m = update_mask(VectorXd::Ones(2), mu, var, 1e-4, 5, &prior);
  EXPECT_EQ(m, VectorXd::Zero(2));
}

TEST(UpdateMask, Examples) {
  const VectorXd prior = VectorXd::Constant(3, 1.0);
  std::deque<VectorXd> mu(5, VectorXd::Constant(3, 1.0));
  mu[2](0) = 1.01;  // still moving
  std::deque<VectorXd> var{(VectorXd(3) << 0.2, 0.2, 0.2).finished(), (VectorXd(3) << 0.1, 0.2, 0.1).finished()};
  VectorXd m = update_mask(VectorXd::Ones(3), mu, var, 1e-4, 5, &prior);
  EXPECT_EQ(m, (VectorXd(3) << 1, 1, 0).finished());

  // short history: nothing changes
  std::deque<VectorXd> short_mu(mu.begin(), mu.begin() + 3);
  EXPECT_EQ(update_mask(VectorXd::Ones(3), short_mu, var, 1e-4, 5, &prior), VectorXd::Ones(3));

  // uninformed parameter is not masked even if stationary
  std::deque<VectorXd> var2{VectorXd::Constant(3, 0.9), VectorXd::Constant(3, 0.8)};
  EXPECT_EQ(update_mask(VectorXd::Ones(3), mu, var2, 1e-4, 5, &prior), VectorXd::Ones(3));
  EXPECT_EQ(update_mask(VectorXd::Ones(3), mu, var2, 1e-4, 5, nullptr), (VectorXd(3) << 1, 0, 0).finished());

  // once masked, always masked
  EXPECT_EQ(update_mask(VectorXd::Zero(3), mu, var2, 1e-4, 5, &prior), VectorXd::Zero(3));
  EXPECT_THROW(update_mask(VectorXd::Ones(3), mu, var, 1e-4, 1), FilterError);
}

TEST(Predict, CovarianceIsSandwich) {
  std::mt19937 rng(9);
  ParameterBelief b{random_matrix(rng, 3, 1), random_spd(rng, 3)};
  const MatrixXd A = random_matrix(rng, 6, 3);
  const VectorXd m = random_matrix(rng, 6, 1);
  const Gaussian g = predict(b, A, m);
  EXPECT_EQ(g.mean, m);
  EXPECT_TRUE(g.cov.isApprox(A * b.Sigma * A.transpose(), 1e-12));
  EXPECT_GE(min_eig(g.cov), -1e-12);
  const Gaussian z = predict(ParameterBelief{b.mu, MatrixXd::Zero(3, 3)}, A, m);
  EXPECT_EQ(z.cov, MatrixXd::Zero(6, 6));
}

TEST(Prior, ScalesAndVariance) {
  FilterConfig cfg = j2_config();
  const auto b = prior_from_truth(cfg, j2_truth());
  EXPECT_DOUBLE_EQ(b.mu(1), 0.35);
  EXPECT_DOUBLE_EQ(b.Sigma(1, 1), 0.25 * 0.35 * 0.35);
  const auto c = prior_from_truth(cfg, j2_truth(), 0.5, 0.5, 1.2);
  EXPECT_DOUBLE_EQ(c.mu(0), 0.5);
  EXPECT_DOUBLE_EQ(c.mu(2), 0.36);
  EXPECT_DOUBLE_EQ(c.mu(3), 1.2);
}

TEST(Prior, ParamsAtProjectsIntoAdmissibleBox) {
  FilterConfig cfg;
  cfg.ids = {ParamId::Nu, ParamId::H, ParamId::E};
  cfg.base.law = ElasticLaw::TransverseIsotropic;
  const ModelParams p = params_at(cfg, (VectorXd(3) << 0.7, -1.0, -2.0).finished());
  EXPECT_EQ(p.nu, 0.49);
  EXPECT_EQ(p.H, 0.0);
  EXPECT_GT(p.E, 0.0);
}

TEST(SwitchingKf, IdentityTransitionMatchesSingleModeEkf) {
  FilterConfig cfg = j2_config();
  cfg.Z = Eigen::Matrix2d::Identity();
  cfg.mode_prob0 = {1.0, 0.0};
  const auto prior = prior_from_truth(cfg, j2_truth());
  FilterConfig ecfg = cfg;
  ecfg.use_mask = false;
  ecfg.replay_history = false;
  ecfg.sensitivity.kind = StepKind::ElasticOnly;
  SwitchingKf skf(cfg, prior);
  MaskedEkf ekf(ecfg, prior);
  MaterialState s;
  Strain de = Strain::Zero();
  de(V11) = 0.004;
  de(V12) = 0.002;
  for (int k = 0; k < 20; ++k) {
    const auto r = integrate_step(s, de, j2_truth());
    s = r.state;
    skf.assimilate(de, r.sigma);
    ekf.assimilate(de, r.sigma);
    EXPECT_LT((skf.belief().mu - ekf.belief().mu).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((skf.belief().Sigma - ekf.belief().Sigma).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(skf.mode_prob()(0), 1.0);
  }
}

TEST(SwitchingKf, ProbabilitiesStayNormalized) {
  FilterConfig cfg = j2_config();
  cfg.Z << 0.9, 0.1, 0.2, 0.8;
  cfg.mode_prob0 = {0.5, 0.5};
  SwitchingKf skf(cfg, prior_from_truth(cfg, j2_truth()));
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> u(-0.01, 0.01);
  MaterialState s;
  for (int k = 0; k < 40; ++k) {
    Strain de;
    for (int i = 0; i < 6; ++i) de(i) = u(rng);
    de(V11) += 0.005;
    const auto r = integrate_step(s, de, j2_truth());
    s = r.state;
    skf.assimilate(de, r.sigma);
    EXPECT_NEAR(skf.mode_prob().sum(), 1.0, 1e-12);
    EXPECT_GE(skf.mode_prob().minCoeff(), 0.0);
    for (int m = 0; m < 2; ++m) EXPECT_GE(min_eig(skf.mode(m).belief.Sigma), -1e-12);
  }
}

TEST(SwitchingKf, HardAssignmentIsOneHot) {
  FilterConfig cfg = j2_config();
  cfg.hard_assignment = true;
  SwitchingKf skf(cfg, prior_from_truth(cfg, j2_truth()));
  Strain de = Strain::Zero();
  de(V11) = 0.005;
  MaterialState s;
  for (int k = 0; k < 70; ++k) {
    const auto r = integrate_step(s, de, j2_truth());
    s = r.state;
    skf.assimilate(de, r.sigma);
    EXPECT_EQ(skf.mode_prob().maxCoeff(), 1.0);
    EXPECT_EQ(skf.mode_prob().minCoeff(), 0.0);
  }
  EXPECT_EQ(skf.most_probable(), 1);
}

TEST(SwitchingKf, RejectsInvalidConfiguration) {
  FilterConfig cfg = j2_config();
  const auto prior = prior_from_truth(cfg, j2_truth());
  cfg.mode_prob0 = {0.7, 0.7};
  EXPECT_THROW(SwitchingKf(cfg, prior), FilterError);
  cfg.mode_prob0 = {1.0, 0.0};
  cfg.Z << 0.5, 0.6, 0.0, 1.0;
  EXPECT_THROW(SwitchingKf(cfg, prior), FilterError);
}

// 100 uniaxial-strain steps along a monotonic von Mises path.
class J2Calibration : public ::testing::Test {
 protected:
  static constexpr double kStep = 0.005;
  std::vector<Strain> increments;
  std::vector<Stress> data;
  std::vector<StepMode> modes;

  void SetUp() override {
    Strain de = Strain::Zero();
    de(V11) = kStep;
    MaterialState s;
    for (int k = 0; k < 100; ++k) {
      const auto r = integrate_step(s, de, j2_truth());
      s = r.state;
      increments.push_back(de);
      data.push_back(r.sigma);
      modes.push_back(r.mode);
    }
  }
};

TEST_F(J2Calibration, SwitchingFilterRecoversParametersAndSwitchesMode) {
  FilterConfig cfg = j2_config();
  SwitchingKf skf(cfg, prior_from_truth(cfg, j2_truth()));
  int first_yield = -1;
  for (int k = 0; k < 100; ++k) {
    skf.assimilate(increments[k], data[k]);
    if (modes[k] == StepMode::Plastic && first_yield < 0) first_yield = k;
    if (first_yield < 0) {
      EXPECT_GT(skf.mode_prob()(0), 0.5) << "step " << k;
    }
  }
  ASSERT_GT(first_yield, 0);
  const auto& mu = skf.belief().mu;
  EXPECT_NEAR(mu(0), 1.0, 1e-3);
  EXPECT_NEAR(mu(1), 0.7, 1e-3);
  EXPECT_NEAR(mu(2), 0.3, 0.01);
  EXPECT_NEAR(mu(3), 1.0, 0.05);

  SwitchingKf again(cfg, prior_from_truth(cfg, j2_truth()));
  bool switched = false;
  for (int k = 0; k < 100 && !switched; ++k) {
    again.assimilate(increments[k], data[k]);
    if (k >= first_yield && k <= first_yield + 3) switched = again.mode_prob()(1) > 0.5;
  }
  EXPECT_TRUE(switched);
}

TEST_F(J2Calibration, MaskedFilterRecoversParametersFromUpperYieldPrior) {
  FilterConfig cfg = j2_config();
  MaskedEkf ekf(cfg, prior_from_truth(cfg, j2_truth(), 0.5, 0.5, 1.2));
  for (int k = 0; k < 100; ++k) ekf.assimilate(increments[k], data[k]);
  const auto& mu = ekf.belief().mu;
  EXPECT_NEAR(mu(0), 1.0, 1e-3);
  EXPECT_NEAR(mu(1), 0.7, 1e-3);
  EXPECT_NEAR(mu(2), 0.3, 0.01);
  EXPECT_NEAR(mu(3), 1.0, 0.05);
  EXPECT_EQ(ekf.mask()(0), 0.0);
  EXPECT_EQ(ekf.mask()(1), 0.0);
}

TEST_F(J2Calibration, ElasticParametersFreezeBeforeYield) {
  FilterConfig cfg = j2_config();
  MaskedEkf ekf(cfg, prior_from_truth(cfg, j2_truth(), 0.5, 0.5, 1.2));
  int k = 0;
  for (; modes[static_cast<std::size_t>(k)] == StepMode::Elastic; ++k) ekf.assimilate(increments[k], data[k]);
  EXPECT_EQ(ekf.mask()(0), 0.0);
  EXPECT_EQ(ekf.mask()(1), 0.0);
  EXPECT_EQ(ekf.mask()(2), 1.0);
  EXPECT_EQ(ekf.mask()(3), 1.0);
  const VectorXd frozen = ekf.belief().mu.head(2);
  for (; k < 100; ++k) ekf.assimilate(increments[k], data[k]);
  EXPECT_EQ(ekf.belief().mu.head(2), frozen);
}

// Both read-outs are linear and decoupled in (K, G), so the filter must match
// the batch Gaussian posterior of each scalar regression.
TEST(VolDevObservation, MatchesBatchPosteriorOnElasticData) {
  FilterConfig cfg;
  cfg.ids = {ParamId::K, ParamId::G};
  cfg.base = j2_truth();
  cfg.base.Y0 = std::numeric_limits<double>::infinity();
  cfg.observation = Observation::VolDev;
  cfg.use_mask = false;
  ParameterBelief prior{(VectorXd(2) << 0.5, 0.35).finished(), MatrixXd::Zero(2, 2)};
  prior.Sigma.diagonal() = (0.5 * prior.mu).array().square();
  MaskedEkf ekf(cfg, prior);
  const MatrixXd Hobs = observation_matrix(Observation::VolDev);
  Eigen::Array2d info = prior.Sigma.diagonal().array().inverse();
  Eigen::Array2d lin = info * prior.mu.array();
  MaterialState s;
  double ev = 0.0, g12 = 0.0;
  for (int k = 0; k < 10; ++k) {
    Strain de = Strain::Zero();
    if (k % 2 == 0) {
      de.head(3).setConstant(0.01 / 3.0);
      ev += 0.01;
    } else {
      de(V12) = 0.01;
      g12 += 0.01;
    }
    const auto r = integrate_step(s, de, cfg.base);
    s = r.state;
    const VectorXd y = Hobs * r.sigma;
    ekf.assimilate(de, y);
    info += Eigen::Array2d(ev * ev, g12 * g12) / cfg.noise_var;
    lin += Eigen::Array2d(ev * y(0), g12 * y(1)) / cfg.noise_var;
  }
  EXPECT_NEAR(ekf.belief().mu(0), lin(0) / info(0), 1e-8);
  EXPECT_NEAR(ekf.belief().mu(1), lin(1) / info(1), 1e-8);
  EXPECT_NEAR(ekf.belief().Sigma(1, 1), 1.0 / info(1), 1e-10);
  EXPECT_NEAR(ekf.belief().Sigma(0, 1), 0.0, 1e-12);
}

TEST(BeliefSnapshot, RoundTripIsExact) {
  std::mt19937 rng(21);
  ParameterBelief b{random_matrix(rng, 5, 1), random_spd(rng, 5)};
  std::stringstream ss;
  write_belief(ss, b);
  const ParameterBelief c = read_belief(ss);
  EXPECT_EQ(b.mu, c.mu);
  EXPECT_EQ(b.Sigma, c.Sigma);
}

TEST(BeliefSnapshot, RejectsCorruptInput) {
  std::stringstream bad_magic("KFDOE-BELIEX 1 1\n0\n1\n");
  EXPECT_THROW(read_belief(bad_magic), FormatError);
  std::stringstream bad_version("KFDOE-BELIEF 9 1\n0\n1\n");
  EXPECT_THROW(read_belief(bad_version), FormatError);
  std::stringstream truncated("KFDOE-BELIEF 1 2\n0 1\n1 0\n");
  EXPECT_THROW(read_belief(truncated), FormatError);
  std::stringstream empty("");
  EXPECT_THROW(read_belief(empty), FormatError);
}

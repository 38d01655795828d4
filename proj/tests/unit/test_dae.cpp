#include <gtest/gtest.h>

#include <random>

#include "kfdoe/dae.hpp"

using namespace kfdoe;

namespace {

// z' = theta z, 0 = s - z.
DaeEval toy(const VectorXd& z, const VectorXd& s, const VectorXd& th) {
  DaeEval e;
  e.f = th(0) * z;
  e.g = s - z;
  e.f_z = MatrixXd::Constant(1, 1, th(0));
  e.f_s = MatrixXd::Zero(1, 1);
  e.f_t = z;
  e.g_z = -MatrixXd::Identity(1, 1);
  e.g_s = MatrixXd::Identity(1, 1);
  e.g_t = MatrixXd::Zero(1, 1);
  return e;
}

// Random smooth index-1 DAE:
//   f = a * tanh(W1 z + W2 s + W3 t)
//   g = s + b * tanh(V1 z + V2 s + V3 t) - c
struct SmoothDae {
  MatrixXd W1, W2, W3, V1, V2, V3;
  VectorXd c;
  double a = 0.7, b = 0.3;

  SmoothDae(std::mt19937& rng, int nz, int ns, int nt) {
    std::normal_distribution<double> nd;
    auto r = [&](int m, int n) {
      MatrixXd M(m, n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) M(i, j) = nd(rng);
      return M;
    };
    W1 = r(nz, nz);
    W2 = r(nz, ns);
    W3 = r(nz, nt);
    V1 = r(ns, nz);
    V2 = 0.5 * r(ns, ns);
    V3 = r(ns, nt);
    c = r(ns, 1);
  }

  DaeEval operator()(const VectorXd& z, const VectorXd& s, const VectorXd& t) const {
    const VectorXd u = W1 * z + W2 * s + W3 * t;
    const VectorXd v = V1 * z + V2 * s + V3 * t;
    const VectorXd du = (1.0 - u.array().tanh().square()).matrix();
    const VectorXd dv = (1.0 - v.array().tanh().square()).matrix();
    DaeEval e;
    e.f = a * u.array().tanh().matrix();
    e.g = s + b * v.array().tanh().matrix() - c;
    e.f_z = a * du.asDiagonal() * W1;
    e.f_s = a * du.asDiagonal() * W2;
    e.f_t = a * du.asDiagonal() * W3;
    e.g_z = b * dv.asDiagonal() * V1;
    e.g_s = MatrixXd::Identity(s.size(), s.size()) + b * dv.asDiagonal() * V2;
    e.g_t = b * dv.asDiagonal() * V3;
    return e;
  }
};

double rel_err(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(DaeSensitivities, ToyLinearClosedForm) {
  for (double th : {-2.0, -0.3, 0.4}) {
    for (double dt : {0.1, 0.5}) {
      const VectorXd theta = VectorXd::Constant(1, th);
      const VectorXd z0 = VectorXd::Constant(1, 1.3);
      const DaeStep st = solve_backward_euler(toy, z0, VectorXd::Zero(1), theta, dt);
      const double zk = 1.3 / (1.0 - dt * th);
      EXPECT_NEAR(st.z(0), zk, 1e-12);
      const DaeDerivatives d = dae_sensitivities(st.eval, dt);
      EXPECT_NEAR(d.dfz(0, 0), 1.0 / (1.0 - dt * th), 1e-10);
      EXPECT_NEAR(d.dftheta(0, 0), dt * zk / (1.0 - dt * th), 1e-10);
      EXPECT_NEAR(d.dmz(0, 0), 1.0, 1e-10);
      EXPECT_NEAR(d.dmtheta(0, 0), dt * zk / (1.0 - dt * th), 1e-10);
      EXPECT_NEAR(d.dmtheta_at_fixed_z(0, 0), 0.0, 1e-14);
    }
  }
}

TEST(DaeSensitivities, NoFlowGivesIdentityTransition) {
  DaeEval e;
  e.f_z = MatrixXd::Zero(2, 2);
  e.f_s = MatrixXd::Zero(2, 3);
  e.f_t = MatrixXd::Zero(2, 2);
  e.g_z = MatrixXd::Ones(3, 2);
  e.g_s = 2.0 * MatrixXd::Identity(3, 3);
  e.g_t = MatrixXd::Ones(3, 2);
  const DaeDerivatives d = dae_sensitivities(e, 0.1);
  EXPECT_EQ(d.dfz, MatrixXd::Identity(2, 2));
  EXPECT_EQ(d.dftheta, MatrixXd::Zero(2, 2));
  EXPECT_TRUE(d.dmz.isApprox(-0.5 * MatrixXd::Ones(3, 2)));
}

TEST(DaeSensitivities, MatchesFiniteDifferencesOnRandomSmoothDaes) {
  std::mt19937 rng(2024);
  std::normal_distribution<double> nd;
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const int nz = 1 + trial % 3, ns = 1 + (trial / 3) % 3, nt = 1 + trial % 2;
    const SmoothDae dae(rng, nz, ns, nt);
    const DaeModel model = std::cref(dae);
    VectorXd z0(nz), th(nt);
    for (int i = 0; i < nz; ++i) z0(i) = 0.5 * nd(rng);
    for (int i = 0; i < nt; ++i) th(i) = 0.5 * nd(rng);
    const double dt = 0.2;
    const VectorXd s0 = VectorXd::Zero(ns);
    const DaeStep st = solve_backward_euler(model, z0, s0, th, dt);
    const DaeDerivatives d = dae_sensitivities(st.eval, dt);

    MatrixXd fz(nz, nz), ft(nz, nt), mt(ns, nt), sz(ns, nz);
    for (int j = 0; j < nz; ++j) {
      VectorXd zp = z0, zm = z0;
      zp(j) += h;
      zm(j) -= h;
      fz.col(j) = (solve_backward_euler(model, zp, s0, th, dt).z - solve_backward_euler(model, zm, s0, th, dt).z) /
                  (2 * h);
    }
    for (int j = 0; j < nt; ++j) {
      VectorXd tp = th, tm = th;
      tp(j) += h;
      tm(j) -= h;
      const DaeStep a = solve_backward_euler(model, z0, s0, tp, dt);
      const DaeStep b = solve_backward_euler(model, z0, s0, tm, dt);
      ft.col(j) = (a.z - b.z) / (2 * h);
      mt.col(j) = (a.s - b.s) / (2 * h);
    }
    // s as a function of z_k alone: Newton on g with z fixed
    auto solve_s = [&](const VectorXd& z) {
      VectorXd s = st.s;
      for (int it = 0; it < 50; ++it) {
        const DaeEval e = dae(z, s, th);
        s -= e.g_s.fullPivLu().solve(e.g);
        if (e.g.norm() < 1e-15) break;
      }
      return s;
    };
    for (int j = 0; j < nz; ++j) {
      VectorXd zp = st.z, zm = st.z;
      zp(j) += h;
      zm(j) -= h;
      sz.col(j) = (solve_s(zp) - solve_s(zm)) / (2 * h);
    }
    EXPECT_LT(rel_err(d.dfz, fz), 1e-6) << "trial " << trial;
    EXPECT_LT(rel_err(d.dftheta, ft), 1e-6) << "trial " << trial;
    EXPECT_LT(rel_err(d.dmz, sz), 1e-6) << "trial " << trial;
    EXPECT_LT(rel_err(d.dmtheta, mt), 1e-6) << "trial " << trial;
  }
}

TEST(DaeSensitivities, GeneralMeasurementChainRule) {
  std::mt19937 rng(7);
  const SmoothDae dae(rng, 2, 2, 2);
  const DaeModel model = std::cref(dae);
  const MatrixXd Mz = (MatrixXd(1, 2) << 0.3, -1.2).finished();
  const MatrixXd Ms = (MatrixXd(1, 2) << 2.0, 0.5).finished();
  const MatrixXd Mt = (MatrixXd(1, 2) << -0.7, 0.1).finished();
  auto meas = [&](const DaeStep& st, const VectorXd& th) { return (Mz * st.z + Ms * st.s + Mt * th).eval(); };
  const VectorXd z0 = (VectorXd(2) << 0.2, -0.1).finished();
  const VectorXd th = (VectorXd(2) << 0.4, 0.3).finished();
  const VectorXd s0 = VectorXd::Zero(2);
  const double dt = 0.3, h = 1e-6;
  const DaeStep st = solve_backward_euler(model, z0, s0, th, dt);
  const DaeDerivatives d = dae_sensitivities(st.eval, dt, MeasurementPartials{Mz, Ms, Mt});
  MatrixXd fd(1, 2);
  for (int j = 0; j < 2; ++j) {
    VectorXd tp = th, tm = th;
    tp(j) += h;
    tm(j) -= h;
    fd.col(j) = (meas(solve_backward_euler(model, z0, s0, tp, dt), tp) -
                 meas(solve_backward_euler(model, z0, s0, tm, dt), tm)) /
                (2 * h);
  }
  EXPECT_LT(rel_err(d.dmtheta, fd), 1e-6);
}

TEST(DaeSensitivities, SingularAlgebraicJacobianIsIndexViolation) {
  DaeEval e = toy(VectorXd::Ones(1), VectorXd::Ones(1), VectorXd::Ones(1));
  e.g_s.setZero();
  EXPECT_THROW(dae_sensitivities(e, 0.1), IndexViolation);
}

TEST(TransitionMatrix, Layouts) {
  DaeDerivatives d;
  d.dfz = MatrixXd::Constant(2, 2, 3.0);
  d.dftheta = MatrixXd::Constant(2, 2, 5.0);
  const MatrixXd F = transition_matrix(d);
  EXPECT_EQ(F.bottomRightCorner(2, 2), MatrixXd::Identity(2, 2));
  EXPECT_EQ(F.bottomLeftCorner(2, 2), MatrixXd::Zero(2, 2));
  const MatrixXd P = transition_matrix_lower_left_identity(d);
  EXPECT_EQ(P.bottomLeftCorner(2, 2), MatrixXd::Identity(2, 2));
  EXPECT_EQ(P.bottomRightCorner(2, 2), MatrixXd::Zero(2, 2));
  EXPECT_EQ(P.topRows(2), F.topRows(2));
}

// Linear DAE: z' = a z + b t, 0 = s - c z - e t. The joint EKF must coincide
// with the textbook Kalman filter on the augmented linear system.
TEST(JointEkf, LinearDaeEqualsTextbookKalmanFilter) {
  const double a = -0.8, b = 0.5, c = 2.0, e = 0.3, dt = 0.1;
  const DaeModel model = [&](const VectorXd& z, const VectorXd& s, const VectorXd& t) {
    DaeEval ev;
    ev.f = a * z + b * t;
    ev.g = s - c * z - e * t;
    ev.f_z = MatrixXd::Constant(1, 1, a);
    ev.f_s = MatrixXd::Zero(1, 1);
    ev.f_t = MatrixXd::Constant(1, 1, b);
    ev.g_z = MatrixXd::Constant(1, 1, -c);
    ev.g_s = MatrixXd::Identity(1, 1);
    ev.g_t = MatrixXd::Constant(1, 1, -e);
    return ev;
  };
  Eigen::Matrix2d F;
  F << 1.0 / (1 - dt * a), dt * b / (1 - dt * a), 0.0, 1.0;
  const Eigen::RowVector2d Hm(c, e);
  JointNoise q{MatrixXd::Constant(1, 1, 1e-4), MatrixXd::Constant(1, 1, 1e-6), MatrixXd::Constant(1, 1, 1e-3)};
  Eigen::Matrix2d Q = Eigen::Matrix2d::Zero();
  Q(0, 0) = 1e-4;
  Q(1, 1) = 1e-6;

  JointBelief jb{(VectorXd(2) << 0.0, 0.2).finished(), Eigen::Matrix2d::Identity()};
  Eigen::Vector2d x = jb.x;
  Eigen::Matrix2d P = jb.P;
  double z_true = 1.0;
  const double t_true = 1.5;
  std::mt19937 rng(1);
  std::normal_distribution<double> nd(0.0, std::sqrt(1e-3));
  for (int k = 0; k < 30; ++k) {
    z_true = (z_true + dt * b * t_true) / (1 - dt * a);
    const VectorXd y = VectorXd::Constant(1, c * z_true + e * t_true + nd(rng));
    jb = joint_ekf_step(model, jb, 1, VectorXd::Zero(1), dt, y, q).belief;

    x = F * x;
    P = F * P * F.transpose() + Q;
    const double S = Hm * P * Hm.transpose() + 1e-3;
    const Eigen::Vector2d K = P * Hm.transpose() / S;
    x += K * (y(0) - Hm * x);
    P -= K * S * K.transpose();
    EXPECT_LT((jb.x - x).cwiseAbs().maxCoeff(), 1e-9) << k;
    EXPECT_LT((jb.P - P).cwiseAbs().maxCoeff(), 1e-9) << k;
  }
  EXPECT_NEAR(jb.x(1), t_true, 0.1);
}

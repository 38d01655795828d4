#pragma once

// Exact sensitivities of a backward-Euler step of a semi-explicit index-1 DAE
//   z' = f(z, s, theta),   0 = g(z, s, theta),   d = m(z, s, theta)
// and the joint state/parameter EKF built on them.

#include <Eigen/Dense>

#include <functional>
#include <optional>

#include "kfdoe/errors.hpp"
#include "kfdoe/kalman.hpp"

namespace kfdoe {

/// Values and partial derivatives of the rate f and constraint g at one point.
struct DaeEval {
  VectorXd f, g;
  MatrixXd f_z, f_s, f_t;
  MatrixXd g_z, g_s, g_t;
};

/// Partials of a general measurement function. Absent means d = s.
struct MeasurementPartials {
  MatrixXd m_z, m_s, m_t;
};

using DaeModel = std::function<DaeEval(const VectorXd& z, const VectorXd& s, const VectorXd& theta)>;

struct DaeDerivatives {
  MatrixXd dfz;       // d z_k / d z_{k-1}
  MatrixXd dftheta;   // d z_k / d theta
  MatrixXd dsdz;      // d s_k / d z_k
  MatrixXd dmz;       // d m / d z_k
  MatrixXd dmtheta;   // total d m / d theta through z_k
  MatrixXd dmtheta_at_fixed_z;  // d m / d theta holding z_k
};

/// Assembles the step derivatives from partials evaluated at the converged
/// (z_k, s_k, theta). Throws IndexViolation if d g / d s is singular.
inline DaeDerivatives dae_sensitivities(const DaeEval& e, double dt,
                                        const std::optional<MeasurementPartials>& m = std::nullopt) {
  const Eigen::Index nz = e.f_z.rows();
  Eigen::FullPivLU<MatrixXd> gs(e.g_s);
  if (e.g_s.rows() != e.g_s.cols() || !gs.isInvertible() || gs.rcond() < 1e-13)
    throw IndexViolation("d g / d s is singular: the DAE is not index 1 at this point");

  DaeDerivatives d;
  const MatrixXd gs_gz = gs.solve(e.g_z);
  const MatrixXd gs_gt = gs.solve(e.g_t);
  const MatrixXd lhs = MatrixXd::Identity(nz, nz) - dt * e.f_z + dt * e.f_s * gs_gz;
  Eigen::FullPivLU<MatrixXd> J(lhs);
  if (!J.isInvertible()) throw IndexViolation("implicit step Jacobian is singular");
  d.dfz = J.inverse();
  d.dftheta = J.solve(dt * e.f_t - dt * e.f_s * gs_gt);
  d.dsdz = -gs_gz;
  const MatrixXd dsdt_total = -(gs_gz * d.dftheta + gs_gt);
  if (!m) {
    d.dmz = d.dsdz;
    d.dmtheta = dsdt_total;
    d.dmtheta_at_fixed_z = -gs_gt;
  } else {
    d.dmz = m->m_z + m->m_s * d.dsdz;
    d.dmtheta = m->m_z * d.dftheta + m->m_t + m->m_s * dsdt_total;
    d.dmtheta_at_fixed_z = m->m_t - m->m_s * gs_gt;
  }
  return d;
}

/// Joint-state transition with the parameter identity on the diagonal.
inline MatrixXd transition_matrix(const DaeDerivatives& d) {
  const Eigen::Index nz = d.dfz.rows(), nt = d.dftheta.cols();
  MatrixXd F = MatrixXd::Zero(nz + nt, nz + nt);
  F.topLeftCorner(nz, nz) = d.dfz;
  F.topRightCorner(nz, nt) = d.dftheta;
  F.bottomRightCorner(nt, nt).setIdentity();
  return F;
}

/// The block layout [[dfz, dftheta], [I, 0]] with the identity in the
/// lower-left block. Kept for comparison; it maps z into theta.
inline MatrixXd transition_matrix_lower_left_identity(const DaeDerivatives& d) {
  const Eigen::Index nz = d.dfz.rows(), nt = d.dftheta.cols();
  MatrixXd F = MatrixXd::Zero(nz + nt, nz + nt);
  F.topLeftCorner(nz, nz) = d.dfz;
  F.topRightCorner(nz, nt) = d.dftheta;
  F.bottomLeftCorner(nt, nz) = MatrixXd::Identity(nt, nz);
  return F;
}

struct DaeStep {
  VectorXd z, s;
  DaeEval eval;
  int iterations = 0;
};

/// Newton solve of z_k = z_{k-1} + dt f(z_k, s_k, theta), g(z_k, s_k, theta) = 0.
inline DaeStep solve_backward_euler(const DaeModel& model, const VectorXd& z_prev, const VectorXd& s_guess,
                                    const VectorXd& theta, double dt, double tol = 1e-13, int max_iters = 50) {
  const Eigen::Index nz = z_prev.size(), ns = s_guess.size();
  DaeStep out{z_prev, s_guess, {}, 0};
  double res = 0.0;
  for (; out.iterations <= max_iters; ++out.iterations) {
    out.eval = model(out.z, out.s, theta);
    VectorXd F(nz + ns);
    F.head(nz) = out.z - z_prev - dt * out.eval.f;
    F.tail(ns) = out.eval.g;
    res = F.norm();
    if (res <= tol * (1.0 + out.z.norm() + out.s.norm())) return out;
    MatrixXd J(nz + ns, nz + ns);
    J.topLeftCorner(nz, nz) = MatrixXd::Identity(nz, nz) - dt * out.eval.f_z;
    J.topRightCorner(nz, ns) = -dt * out.eval.f_s;
    J.bottomLeftCorner(ns, nz) = out.eval.g_z;
    J.bottomRightCorner(ns, ns) = out.eval.g_s;
    const VectorXd dx = J.fullPivLu().solve(-F);
    out.z += dx.head(nz);
    out.s += dx.tail(ns);
  }
  throw IntegrationError("backward Euler DAE step did not converge", res);
}

/// Covariance of the joint state [z; theta] and its mean.
struct JointBelief {
  VectorXd x;
  MatrixXd P;
};

struct JointNoise {
  MatrixXd Q_eta;    // hidden-state process noise
  MatrixXd Q_delta;  // parameter random walk
  MatrixXd R;        // measurement noise
};

struct JointStepResult {
  JointBelief belief;
  VectorXd s;  // algebraic state at the predicted mean
  double log_likelihood = 0.0;
};

/// One predict/update cycle of the EKF on the augmented state [z; theta]
/// with measurement d = s.
inline JointStepResult joint_ekf_step(const DaeModel& model, const JointBelief& b, Eigen::Index nz,
                                      const VectorXd& s_guess, double dt, const VectorXd& datum, const JointNoise& q) {
  const Eigen::Index nt = b.x.size() - nz;
  const VectorXd theta = b.x.tail(nt);
  const DaeStep st = solve_backward_euler(model, b.x.head(nz), s_guess, theta, dt);
  const DaeDerivatives d = dae_sensitivities(st.eval, dt);

  ParameterBelief pred{VectorXd(nz + nt), MatrixXd::Zero(nz + nt, nz + nt)};
  pred.mu << st.z, theta;
  const MatrixXd F = transition_matrix(d);
  pred.Sigma = F * b.P * F.transpose();
  pred.Sigma.topLeftCorner(nz, nz) += q.Q_eta;
  pred.Sigma.bottomRightCorner(nt, nt) += q.Q_delta;
  detail::make_psd(pred.Sigma);

  MatrixXd A(d.dmz.rows(), nz + nt);
  A << d.dmz, d.dmtheta_at_fixed_z;
  const UpdateResult up = ekf_update(pred, A, datum - st.s, q.R);
  return {{up.belief.mu, up.belief.Sigma}, st.s, up.log_likelihood};
}

}  // namespace kfdoe

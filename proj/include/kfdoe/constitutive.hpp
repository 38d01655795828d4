#pragma once

// Small-strain elastoplasticity with a modified Hill yield surface, linear
// isotropic hardening and associative flow, plus per-step parameter
// sensitivities of the stress response.
//
// Voigt ordering is (11,22,33,23,13,12) throughout the library. Strain
// vectors carry engineering shear strains (gamma_ij = 2 eps_ij), stress
// vectors carry tensor shear components, so sigma . eps is the work density.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kfdoe/errors.hpp"

namespace kfdoe {

using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Strain = Vector6;
using Stress = Vector6;
using Sensitivity = Eigen::Matrix<double, 6, Eigen::Dynamic>;

enum Voigt : int { V11 = 0, V22 = 1, V33 = 2, V23 = 3, V13 = 4, V12 = 5 };

/// Identifies one scalar of ModelParams. Calibrated parameter sets are
/// ordered lists of these ids.
enum class ParamId : int { E, Nu, NuPerp, K, G, B, Y0, H };

inline constexpr std::array<std::string_view, 8> kParamNames{"E", "nu", "nu_perp", "K",
                                                             "G", "B",  "Y0",      "H"};

inline std::string_view param_name(ParamId id) { return kParamNames[static_cast<int>(id)]; }

inline ParamId param_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kParamNames.size(); ++i)
    if (kParamNames[i] == name) return static_cast<ParamId>(i);
  throw FormatError("unknown parameter name '" + std::string(name) + "'");
}

/// Isotropic (bulk/shear) or transversely isotropic (E, nu, nu_perp) elasticity.
enum class ElasticLaw { BulkShear, TransverseIsotropic };

/// Transverse-isotropy moduli. `Consistent` is the inverse of the
/// transversely isotropic compliance (axis 1 is the symmetry axis) and reduces
/// to isotropy at nu_perp == nu. `AsPrinted` evaluates the closed-form entries
/// with the single denominator 1 - 2 nu^2 nu_perp.
enum class StiffnessForm { Consistent, AsPrinted };

struct ModelParams {
  ElasticLaw law = ElasticLaw::BulkShear;
  StiffnessForm form = StiffnessForm::Consistent;
  double E = 1.0;
  double nu = 0.0;
  double nu_perp = 0.0;
  double K = 1.0;
  double G = 1.0;
  double B = 1.0;
  double Y0 = std::numeric_limits<double>::infinity();  // +inf: pure elasticity
  double H = 0.0;

  double& operator[](ParamId id) {
    switch (id) {
      case ParamId::E: return E;
      case ParamId::Nu: return nu;
      case ParamId::NuPerp: return nu_perp;
      case ParamId::K: return K;
      case ParamId::G: return G;
      case ParamId::B: return B;
      case ParamId::Y0: return Y0;
      case ParamId::H: return H;
    }
    throw Error("invalid parameter id");
  }
  double operator[](ParamId id) const { return const_cast<ModelParams&>(*this)[id]; }

  /// Physical admissibility of the parameter set.
  bool admissible() const {
    const bool elastic_ok = law == ElasticLaw::BulkShear
                                ? (K > 0 && G > 0)
                                : (E > 0 && nu > -1 && nu < 0.5 && nu_perp > -1 && nu_perp < 0.5);
    return elastic_ok && B > 0 && Y0 > 0 && H >= 0;
  }
};

// ---------------------------------------------------------------- elasticity

template <class T>
Eigen::Matrix<T, 6, 6> transverse_isotropic_stiffness_t(T E, T nu, T nup, StiffnessForm form) {
  using std::abs;
  constexpr double tiny = 1e-12;
  Eigen::Matrix<T, 6, 6> C = Eigen::Matrix<T, 6, 6>::Zero();
  if (form == StiffnessForm::AsPrinted) {
    const T d = T(1) - T(2) * nu * nu * nup;
    if (abs(d) < tiny || abs(T(1) + nup) < tiny || abs(T(1) - nu) < tiny || abs(T(1) - nup) < tiny)
      throw SingularParameterization("transverse isotropy: 1 - 2 nu^2 nu_perp vanishes");
    C(0, 0) = E * (T(1) - nup) / d;
    C(1, 1) = C(2, 2) = E * (T(1) - nu * nu) / d;
    C(0, 1) = C(1, 0) = C(0, 2) = C(2, 0) = E * nu / d;
    C(1, 2) = C(2, 1) = E * (nu * nu + nup) / (d * (T(1) + nup));
    C(V12, V12) = C(V13, V13) = E / (T(1) - nu);
    C(V23, V23) = E / (T(1) - nup);
    return C;
  }
  const T d = (T(1) + nup) * (T(1) - nup - T(2) * nu * nu);
  if (abs(d) < tiny || abs(T(1) + nu) < tiny)
    throw SingularParameterization("transverse isotropy: (1 + nu_perp)(1 - nu_perp - 2 nu^2) vanishes");
  C(0, 0) = E * (T(1) - nup * nup) / d;
  C(1, 1) = C(2, 2) = E * (T(1) - nu * nu) / d;
  C(0, 1) = C(1, 0) = C(0, 2) = C(2, 0) = E * nu * (T(1) + nup) / d;
  C(1, 2) = C(2, 1) = E * (nup + nu * nu) / d;
  C(V12, V12) = C(V13, V13) = E / (T(2) * (T(1) + nu));
  C(V23, V23) = E / (T(2) * (T(1) + nup));
  return C;
}

inline Matrix6 stiffness_transverse_isotropic(double E, double nu, double nu_perp,
                                              StiffnessForm form = StiffnessForm::Consistent) {
  return transverse_isotropic_stiffness_t<double>(E, nu, nu_perp, form);
}

/// Isotropic stiffness from bulk modulus K and shear modulus G.
inline Matrix6 stiffness_bulk_shear(double K, double G) {
  Matrix6 C = Matrix6::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) C(i, j) = (i == j) ? K + 4.0 * G / 3.0 : K - 2.0 * G / 3.0;
  for (int i = 3; i < 6; ++i) C(i, i) = G;
  return C;
}

inline Matrix6 stiffness(const ModelParams& p) {
  return p.law == ElasticLaw::BulkShear ? stiffness_bulk_shear(p.K, p.G)
                                        : stiffness_transverse_isotropic(p.E, p.nu, p.nu_perp, p.form);
}

/// dC/dtheta. Poisson-ratio derivatives use complex-step differentiation, which
/// is exact to roundoff for these rational expressions.
inline Matrix6 stiffness_derivative(const ModelParams& p, ParamId id) {
  if (p.law == ElasticLaw::BulkShear) {
    if (id == ParamId::K) return stiffness_bulk_shear(1.0, 0.0);
    if (id == ParamId::G) return stiffness_bulk_shear(0.0, 1.0);
    return Matrix6::Zero();
  }
  using cd = std::complex<double>;
  constexpr double h = 1e-30;
  switch (id) {
    case ParamId::E: return stiffness_transverse_isotropic(1.0, p.nu, p.nu_perp, p.form);
    case ParamId::Nu:
      return transverse_isotropic_stiffness_t<cd>(cd(p.E), cd(p.nu, h), cd(p.nu_perp), p.form).imag() / h;
    case ParamId::NuPerp:
      return transverse_isotropic_stiffness_t<cd>(cd(p.E), cd(p.nu), cd(p.nu_perp, h), p.form).imag() / h;
    default: return Matrix6::Zero();
  }
}

/// Scalar volumetric/shear laws of the isotropic elastic game.
/// Convention: eps_v = eps11 + eps22 + eps33 and sigma_v = (s11 + s22 + s33) / 3,
/// so sigma_v = K eps_v; eps_s = gamma12 (engineering) and sigma_s = s12, so
/// sigma_s = G eps_s.
inline std::pair<double, double> isotropic_vol_dev_response(double K, double G, double eps_v, double eps_s) {
  return {K * eps_v, G * eps_s};
}

/// (sigma_v, sigma_s) of a Voigt stress under the vol/dev convention above.
inline Eigen::Vector2d vol_dev_components(const Stress& s) {
  return {(s(V11) + s(V22) + s(V33)) / 3.0, s(V12)};
}

// ------------------------------------------------------------------- yield

/// Quadratic form of the modified Hill surface, phi^2 = s^T P s.
inline Matrix6 hill_projection(double B) {
  Matrix6 P = Matrix6::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) P(i, j) = (i == j) ? 2.0 / 3.0 : -1.0 / 3.0;
  for (int i = 3; i < 6; ++i) P(i, i) = 0.5 * B;
  return P;
}

inline double hill_equivalent(const Stress& s, double B) {
  const double d23 = s(V22) - s(V33), d13 = s(V11) - s(V33), d21 = s(V22) - s(V11);
  const double q = (d23 * d23 + d13 * d13 + d21 * d21) / 3.0 +
                   0.5 * B * (s(V23) * s(V23) + s(V13) * s(V13) + s(V12) * s(V12));
  return std::sqrt(std::max(q, 0.0));
}

inline double yield_stress(double ep, const ModelParams& p) { return p.Y0 + p.H * ep; }

inline double yield_value(const Stress& s, double ep, const ModelParams& p) {
  return hill_equivalent(s, p.B) - yield_stress(ep, p);
}

// ------------------------------------------------------------ integration

struct MaterialState {
  Strain eps = Strain::Zero();
  Strain eps_p = Strain::Zero();
  double ep = 0.0;
  Stress sigma = Stress::Zero();
};

enum class StepMode { Elastic, Plastic };

/// Which branch a step is allowed to take. ElasticOnly and PlasticOnly are the
/// two competing submodels of the switching filter; PlasticOnly enforces the
/// consistency condition even for trial states inside the surface.
enum class StepKind { Elastoplastic, ElasticOnly, PlasticOnly };

struct StepResult {
  MaterialState state;
  Stress sigma = Stress::Zero();
  StepMode mode = StepMode::Elastic;
  int newton_iters = 0;
  double multiplier = 0.0;  // gamma = dlambda / phi; plastic strain increment is gamma * P * sigma
};

struct ReturnMapOptions {
  double tol_g = 1e-10;
  int max_iters = 50;
};

namespace detail {

struct ConsistencySolution {
  double gamma = 0.0;
  Stress sigma = Stress::Zero();
  int iters = 0;
};

// With x = P^{1/2} sigma and M = P^{1/2} C P^{1/2} = V diag(lam) V^T,
// phi^2(gamma) = sum_i c_i^2 / (1 + gamma lam_i)^2 where c = V^T P^{1/2} trial.
// Returns the largest lam_i whose mode is excited by the trial stress, which
// fixes the pole of phi at gamma = -1 / lam_i.
inline double excited_max_eig(const Matrix6& C, const Matrix6& P, const Stress& trial) {
  Eigen::SelfAdjointEigenSolver<Matrix6> ep(P);
  const Vector6 sq = ep.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Matrix6 Ph = ep.eigenvectors() * sq.asDiagonal() * ep.eigenvectors().transpose();
  Eigen::SelfAdjointEigenSolver<Matrix6> es(Ph * C * Ph);
  const Vector6 c = es.eigenvectors().transpose() * (Ph * trial);
  const double cmax = c.cwiseAbs().maxCoeff();
  double lam = 0.0;
  for (int i = 0; i < 6; ++i)
    if (std::abs(c(i)) > 1e-12 * cmax) lam = std::max(lam, es.eigenvalues()(i));
  return lam;
}

// Solves phi(sigma(gamma)) (1 - H gamma) - Y0 - H ep_n = 0 with
// sigma(gamma) = (I + gamma C P)^{-1} trial, by bracketed Newton.
inline ConsistencySolution solve_consistency(const Stress& trial, double ep_n, const Matrix6& C,
                                             const Matrix6& P, double Y0, double H,
                                             const ReturnMapOptions& opt) {
  const Matrix6 CP = C * P;
  auto eval = [&](double g, Stress& sig, double& r, double& dr) {
    Eigen::PartialPivLU<Matrix6> lu(Matrix6::Identity() + g * CP);
    sig = lu.solve(trial);
    const Vector6 Ps = P * sig;
    const double phi = std::sqrt(std::max(sig.dot(Ps), 0.0));
    r = phi * (1.0 - H * g) - Y0 - H * ep_n;
    if (phi > 0.0) {
      const Vector6 ds = -lu.solve(CP * sig);
      dr = (1.0 - H * g) * Ps.dot(ds) / phi - H * phi;
    } else {
      dr = 0.0;
    }
  };

  ConsistencySolution out;
  Stress sig;
  double r = 0.0, dr = 0.0;
  eval(0.0, sig, r, dr);
  out.sigma = sig;
  if (std::abs(r) <= opt.tol_g) return out;
  if (hill_equivalent(trial, 1.0) == 0.0 && trial.tail<3>().isZero() && std::abs(r) > opt.tol_g)
    throw IntegrationError("return mapping: trial stress has no deviatoric part", r);

  // Bracket: g_pos has r > 0, g_neg has r < 0.
  double g_pos = 0.0, g_neg = 0.0;
  Stress tmp;
  double rt = 0.0, dt = 0.0;
  if (r > 0.0) {
    double hi = 1e-3;
    int k = 0;
    for (eval(hi, tmp, rt, dt); rt >= 0.0 && k < 200; ++k) {
      hi *= 2.0;
      eval(hi, tmp, rt, dt);
    }
    if (rt >= 0.0) throw IntegrationError("return mapping: cannot bracket plastic multiplier", r);
    g_pos = 0.0;
    g_neg = hi;
  } else {
    const double lam = excited_max_eig(C, P, trial);
    if (!(lam > 0.0)) throw IntegrationError("return mapping: degenerate flow operator", r);
    const double g_min = -1.0 / lam;
    double lo = 0.5 * g_min;
    int k = 1;
    for (eval(lo, tmp, rt, dt); rt <= 0.0 && k < 60; ++k) {
      lo = g_min * (1.0 - std::ldexp(1.0, -k - 1));
      eval(lo, tmp, rt, dt);
    }
    if (rt <= 0.0) throw IntegrationError("return mapping: cannot reach yield surface from inside", r);
    g_pos = lo;
    g_neg = 0.0;
  }

  double g = 0.0;
  for (int it = 1; it <= opt.max_iters; ++it) {
    double next = (dr != 0.0) ? g - r / dr : 0.5 * (g_pos + g_neg);
    const double a = std::min(g_pos, g_neg), b = std::max(g_pos, g_neg);
    if (!(next > a && next < b)) next = 0.5 * (g_pos + g_neg);
    g = next;
    eval(g, sig, r, dr);
    (r > 0.0 ? g_pos : g_neg) = g;
    out.iters = it;
    if (std::abs(r) <= opt.tol_g) {
      // one polishing step keeps finite-difference sensitivities clean
      if (dr != 0.0) {
        Stress s2;
        double r2 = 0.0, d2 = 0.0;
        const double g2 = g - r / dr;
        eval(g2, s2, r2, d2);
        if (std::abs(r2) < std::abs(r)) {
          g = g2;
          sig = s2;
        }
      }
      out.gamma = g;
      out.sigma = sig;
      return out;
    }
  }
  throw IntegrationError("return mapping did not converge", r);
}

}  // namespace detail

/// Advances the material by a strain increment. The elastic predictor is
/// C (eps + d_eps - eps_p), i.e. sigma_{k-1} + C d_eps for a state produced
/// with the same parameters.
inline StepResult step(const MaterialState& state, const Strain& d_eps, const ModelParams& p, StepKind kind,
                       const ReturnMapOptions& opt = {}) {
  const Matrix6 C = stiffness(p);
  StepResult res;
  res.state = state;
  res.state.eps = state.eps + d_eps;
  const Stress trial = C * (res.state.eps - state.eps_p);

  const bool try_plastic = kind == StepKind::PlasticOnly ||
                           (kind == StepKind::Elastoplastic && std::isfinite(p.Y0) &&
                            yield_value(trial, state.ep, p) > 0.0);
  if (!try_plastic) {
    res.sigma = res.state.sigma = trial;
    return res;
  }
  if (!std::isfinite(p.Y0)) throw IntegrationError("plastic step requested with infinite yield strength", 0.0);

  const Matrix6 P = hill_projection(p.B);
  const auto sol = detail::solve_consistency(trial, state.ep, C, P, p.Y0, p.H, opt);
  const Vector6 Ps = P * sol.sigma;
  res.state.eps_p = state.eps_p + sol.gamma * Ps;
  res.state.ep = state.ep + sol.gamma * std::sqrt(std::max(sol.sigma.dot(Ps), 0.0));
  res.sigma = res.state.sigma = sol.sigma;
  res.mode = StepMode::Plastic;
  res.newton_iters = sol.iters;
  res.multiplier = sol.gamma;
  return res;
}

inline StepResult integrate_step(const MaterialState& state, const Strain& d_eps, const ModelParams& p,
                                 const ReturnMapOptions& opt = {}) {
  return step(state, d_eps, p, StepKind::Elastoplastic, opt);
}

/// Runs a whole strain program (list of increments) from the virgin state.
inline std::vector<MaterialState> simulate_path(std::span<const Strain> increments, const ModelParams& p,
                                                const ReturnMapOptions& opt = {}) {
  std::vector<MaterialState> out;
  out.reserve(increments.size());
  MaterialState s;
  for (const auto& de : increments) {
    s = integrate_step(s, de, p, opt).state;
    out.push_back(s);
  }
  return out;
}

// ----------------------------------------------------------- sensitivities

enum class SensitivityMethod { FiniteDifference, Analytic };

struct SensitivityOptions {
  StepKind kind = StepKind::Elastoplastic;
  SensitivityMethod plastic = SensitivityMethod::FiniteDifference;
  double rel_step = 1e-6;
  ReturnMapOptions return_map{};
};

namespace detail {

inline Matrix6 hill_projection_dB() {
  Matrix6 dP = Matrix6::Zero();
  for (int i = 3; i < 6; ++i) dP(i, i) = 0.5;
  return dP;
}

// Implicit differentiation of the converged return map:
//   (I + g C P) s - C e_tr = 0,   phi(s)(1 - H g) - Y0 - H ep_n = 0.
inline Sensitivity plastic_sensitivity_analytic(const MaterialState& state, const StepResult& res,
                                                const Strain& d_eps, const ModelParams& p,
                                                std::span<const ParamId> ids) {
  const Matrix6 C = stiffness(p);
  const Matrix6 P = hill_projection(p.B);
  const Stress& s = res.sigma;
  const double g = res.multiplier;
  const Vector6 Ps = P * s;
  const double phi = std::sqrt(std::max(s.dot(Ps), 0.0));
  const Strain e_tr = state.eps + d_eps - state.eps_p;

  Eigen::Matrix<double, 7, 7> J = Eigen::Matrix<double, 7, 7>::Zero();
  J.topLeftCorner<6, 6>() = Matrix6::Identity() + g * C * P;
  J.topRightCorner<6, 1>() = C * Ps;
  J.bottomLeftCorner<1, 6>() = (1.0 - p.H * g) * Ps.transpose() / phi;
  J(6, 6) = -p.H * phi;
  Eigen::PartialPivLU<Eigen::Matrix<double, 7, 7>> lu(J);

  Sensitivity A(6, static_cast<Eigen::Index>(ids.size()));
  for (std::size_t c = 0; c < ids.size(); ++c) {
    const ParamId id = ids[c];
    Eigen::Matrix<double, 7, 1> dF = Eigen::Matrix<double, 7, 1>::Zero();
    const Matrix6 dC = stiffness_derivative(p, id);
    dF.head<6>() = g * dC * Ps - dC * e_tr;
    if (id == ParamId::B) {
      const Matrix6 dP = hill_projection_dB();
      dF.head<6>() += g * C * dP * s;
      dF(6) = (1.0 - p.H * g) * s.dot(dP * s) / (2.0 * phi);
    } else if (id == ParamId::Y0) {
      dF(6) = -1.0;
    } else if (id == ParamId::H) {
      dF(6) = -(g * phi + state.ep);
    }
    A.col(static_cast<Eigen::Index>(c)) = -(lu.solve(dF)).head<6>();
  }
  return A;
}

}  // namespace detail

/// Per-step sensitivity dsigma_k/dtheta with the incoming state held fixed.
/// Columns follow `ids`. Elastic steps are differentiated analytically;
/// plastic steps by central differences of the full step (default) or by
/// implicit differentiation of the return map.
inline Sensitivity sensitivities(const MaterialState& state, const Strain& d_eps, const ModelParams& p,
                                 std::span<const ParamId> ids, const SensitivityOptions& opt = {}) {
  const StepResult base = step(state, d_eps, p, opt.kind, opt.return_map);
  Sensitivity A(6, static_cast<Eigen::Index>(ids.size()));
  if (base.mode == StepMode::Elastic) {
    const Strain e = base.state.eps - state.eps_p;
    for (std::size_t c = 0; c < ids.size(); ++c)
      A.col(static_cast<Eigen::Index>(c)) = stiffness_derivative(p, ids[c]) * e;
    return A;
  }
  if (opt.plastic == SensitivityMethod::Analytic)
    return detail::plastic_sensitivity_analytic(state, base, d_eps, p, ids);

  for (std::size_t c = 0; c < ids.size(); ++c) {
    const double v = p[ids[c]];
    const double h = opt.rel_step * (v != 0.0 ? std::abs(v) : 1.0);
    ModelParams plus = p, minus = p;
    plus[ids[c]] = v + h;
    minus[ids[c]] = v - h;
    const Stress sp = step(state, d_eps, plus, opt.kind, opt.return_map).sigma;
    const Stress sm = step(state, d_eps, minus, opt.kind, opt.return_map).sigma;
    A.col(static_cast<Eigen::Index>(c)) = (sp - sm) / (2.0 * h);
  }
  return A;
}

}  // namespace kfdoe

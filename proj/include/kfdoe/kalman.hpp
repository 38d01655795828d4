#pragma once

// Online Bayesian calibration of ModelParams: extended Kalman update, the
// convergence-masked EKF and a two-mode (elastic/plastic) GPB2 switching
// filter. Both filters carry their own hidden material state.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "kfdoe/constitutive.hpp"
#include "kfdoe/errors.hpp"

namespace kfdoe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ParameterBelief {
  VectorXd mu;
  MatrixXd Sigma;

  Eigen::Index size() const { return mu.size(); }
};

struct Gaussian {
  VectorXd mean;
  MatrixXd cov;
};

struct UpdateResult {
  ParameterBelief belief;
  MatrixXd gain;
  MatrixXd S;
  double log_likelihood = 0.0;  // log N(r; 0, S)
  bool regularized = false;
};

namespace detail {

inline bool all_finite(const MatrixXd& m) { return m.allFinite(); }

// Symmetrizes in place and clips negative eigenvalues. Returns true if
// clipping was needed.
inline bool make_psd(MatrixXd& S) {
  S = 0.5 * (S + S.transpose()).eval();
  if (S.size() == 0) return false;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
  if (es.eigenvalues().minCoeff() >= 0.0) return false;
  S = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
  S = 0.5 * (S + S.transpose()).eval();
  return true;
}

// Robust factorization of the residual covariance. Adds diagonal jitter until
// the LDLT is positive definite.
inline Eigen::LDLT<MatrixXd> factor_spd(MatrixXd& S, bool& regularized) {
  Eigen::LDLT<MatrixXd> ldlt(S);
  const double scale = std::max(S.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  double jitter = 1e-12 * scale;
  while (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 1e-14 * scale) {
    S.diagonal().array() += jitter;
    regularized = true;
    jitter *= 10.0;
    ldlt.compute(S);
    if (jitter > scale) throw FilterError("residual covariance cannot be regularized");
  }
  return ldlt;
}

}  // namespace detail

/// Standard Kalman update of a parameter belief against one datum.
inline UpdateResult ekf_update(const ParameterBelief& b, const MatrixXd& A, const VectorXd& r, const MatrixXd& R) {
  if (A.cols() != b.size() || A.rows() != r.size() || R.rows() != r.size() || R.cols() != r.size())
    throw FilterError("ekf_update: inconsistent dimensions");
  if (!detail::all_finite(A) || !r.allFinite() || !detail::all_finite(R) || !b.mu.allFinite() ||
      !detail::all_finite(b.Sigma))
    throw FilterError("ekf_update: non-finite input");

  UpdateResult out;
  const MatrixXd SAt = b.Sigma * A.transpose();
  out.S = A * SAt + R;
  out.S = 0.5 * (out.S + out.S.transpose()).eval();
  const auto ldlt = detail::factor_spd(out.S, out.regularized);
  out.gain = ldlt.solve(SAt.transpose()).transpose();
  out.belief.mu = b.mu + out.gain * r;
  out.belief.Sigma = b.Sigma - out.gain * out.S * out.gain.transpose();
  detail::make_psd(out.belief.Sigma);
  const double logdet = ldlt.vectorD().array().log().sum();
  out.log_likelihood = -0.5 * (r.dot(ldlt.solve(r)) + logdet + r.size() * std::log(2.0 * std::numbers::pi));
  return out;
}

/// Kalman update with the sensitivity columns of converged parameters zeroed.
/// Masked parameters keep their mean and variance. When they are uncorrelated
/// with the free parameters this is exactly ekf_update with A M; otherwise the
/// masked gain rows are zeroed and the covariance is propagated in Joseph form
/// so it stays positive semidefinite.
inline UpdateResult masked_update(const ParameterBelief& b, const MatrixXd& A, const VectorXd& r, const MatrixXd& R,
                                  const VectorXd& mask) {
  if (mask.size() != b.size()) throw FilterError("masked_update: mask size mismatch");
  if ((mask.array() == 1.0).all()) return ekf_update(b, A, r, R);
  const MatrixXd AM = A * mask.asDiagonal();
  bool coupled = false;
  for (Eigen::Index i = 0; i < b.size() && !coupled; ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j)
      if (mask(i) == 0.0 && mask(j) != 0.0 && b.Sigma(i, j) != 0.0) {
        coupled = true;
        break;
      }
  if (!coupled) return ekf_update(b, AM, r, R);

  UpdateResult out = ekf_update(b, AM, r, R);
  out.gain = (mask.asDiagonal() * out.gain).eval();
  out.belief.mu = b.mu + out.gain * r;
  const MatrixXd IKA = MatrixXd::Identity(b.size(), b.size()) - out.gain * AM;
  out.belief.Sigma = IKA * b.Sigma * IKA.transpose() + out.gain * R * out.gain.transpose();
  for (Eigen::Index i = 0; i < b.size(); ++i)
    if (mask(i) == 0.0) out.belief.Sigma(i, i) = b.Sigma(i, i);
  detail::make_psd(out.belief.Sigma);
  return out;
}

/// Cauchy convergence test over the trailing `window` means plus a check that
/// the variance just decreased. Masked entries stay masked. With a prior
/// variance supplied, a parameter must also have shed at least a fraction
/// `min_reduction` of it, so parameters the data has not yet touched are
/// never mistaken for converged ones.
inline VectorXd update_mask(const VectorXd& mask, const std::deque<VectorXd>& mu_history,
                            const std::deque<VectorXd>& var_history, double tol_cauchy, int window,
                            const VectorXd* prior_var = nullptr, double min_reduction = 0.5) {
  if (window < 2) throw FilterError("update_mask: window must be at least 2");
  VectorXd out = mask;
  if (static_cast<int>(mu_history.size()) < window || var_history.size() < 2) return out;
  const std::size_t first = mu_history.size() - static_cast<std::size_t>(window);
  const VectorXd& var_now = var_history.back();
  const VectorXd& var_prev = var_history[var_history.size() - 2];
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask(i) == 0.0) continue;
    double lo = mu_history[first](i), hi = lo;
    for (std::size_t k = first; k < mu_history.size(); ++k) {
      lo = std::min(lo, mu_history[k](i));
      hi = std::max(hi, mu_history[k](i));
    }
    const double mu_i = mu_history.back()(i);
    const bool informed = prior_var == nullptr || var_now(i) <= (1.0 - min_reduction) * (*prior_var)(i);
    if (hi - lo < tol_cauchy * (1.0 + std::abs(mu_i)) && var_now(i) < var_prev(i) && informed) out(i) = 0.0;
  }
  return out;
}

/// Predictive distribution of an observable linearized at the mean.
inline Gaussian predict(const ParameterBelief& b, const MatrixXd& A_star, const VectorXd& model_at_mean) {
  Gaussian g;
  g.mean = model_at_mean;
  g.cov = A_star * b.Sigma * A_star.transpose();
  g.cov = 0.5 * (g.cov + g.cov.transpose()).eval();
  return g;
}

// ------------------------------------------------------------------ config

/// Linear read-out of the observed quantities from the Voigt stress.
enum class Observation { FullStress, VolDev };

inline MatrixXd observation_matrix(Observation o) {
  if (o == Observation::FullStress) return MatrixXd::Identity(6, 6);
  MatrixXd H = MatrixXd::Zero(2, 6);
  H(0, V11) = H(0, V22) = H(0, V33) = 1.0 / 3.0;
  H(1, V12) = 1.0;
  return H;
}

struct FilterConfig {
  std::vector<ParamId> ids;
  ModelParams base;  // law, form and the values of parameters not being calibrated
  Observation observation = Observation::FullStress;
  double noise_var = 1e-6;  // R = noise_var * I
  // masked EKF
  bool use_mask = true;
  double tol_cauchy = 1e-4;
  int window = 5;
  double min_variance_reduction = 0.5;
  // Rebuild the hidden state by replaying all past increments with the
  // current mean instead of carrying it forward step by step.
  bool replay_history = true;
  // switching filter
  Eigen::Matrix2d Z = (Eigen::Matrix2d() << 0.95, 0.05, 0.0, 1.0).finished();
  Eigen::Vector2d mode_prob0{1.0, 0.0};
  std::array<StepKind, 2> mode_kinds{StepKind::ElasticOnly, StepKind::PlasticOnly};
  bool hard_assignment = false;
  SensitivityOptions sensitivity{};

  Eigen::Index n_obs() const { return observation == Observation::FullStress ? 6 : 2; }
  MatrixXd R() const { return noise_var * MatrixXd::Identity(n_obs(), n_obs()); }
};

/// ModelParams with the calibrated entries taken from `mu`, projected into the
/// admissible box so the forward model stays well posed.
inline ModelParams params_at(const FilterConfig& cfg, const VectorXd& mu) {
  ModelParams p = cfg.base;
  for (std::size_t i = 0; i < cfg.ids.size(); ++i) {
    double v = mu(static_cast<Eigen::Index>(i));
    switch (cfg.ids[i]) {
      case ParamId::Nu:
      case ParamId::NuPerp: v = std::clamp(v, -0.95, 0.49); break;
      case ParamId::H: v = std::max(v, 0.0); break;
      default: v = std::max(v, 1e-6); break;
    }
    p[cfg.ids[i]] = v;
  }
  return p;
}

/// Diagonal prior centred on scaled true values. `yield_scale`, when positive,
/// replaces `mean_scale` for Y0 and H.
inline ParameterBelief prior_from_truth(const FilterConfig& cfg, const ModelParams& truth, double mean_scale = 0.5,
                                        double rel_std = 0.5, double yield_scale = 0.0) {
  const auto n = static_cast<Eigen::Index>(cfg.ids.size());
  ParameterBelief b{VectorXd(n), MatrixXd::Zero(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const ParamId id = cfg.ids[static_cast<std::size_t>(i)];
    const bool yield_param = id == ParamId::Y0 || id == ParamId::H;
    b.mu(i) = (yield_param && yield_scale > 0.0 ? yield_scale : mean_scale) * truth[id];
    b.Sigma(i, i) = std::pow(rel_std * b.mu(i), 2);
  }
  return b;
}

struct AssimilationInfo {
  VectorXd prediction;
  VectorXd residual;
  bool regularized = false;
  bool likelihood_fallback = false;
};

// -------------------------------------------------------------- masked EKF

class MaskedEkf {
 public:
  MaskedEkf(FilterConfig cfg, ParameterBelief prior)
      : cfg_(std::move(cfg)),
        belief_(std::move(prior)),
        prior_var_(belief_.Sigma.diagonal()),
        mask_(VectorXd::Ones(belief_.size())) {
    if (static_cast<std::size_t>(belief_.size()) != cfg_.ids.size()) throw FilterError("prior size mismatch");
  }

  AssimilationInfo assimilate(const Strain& d_eps, const VectorXd& datum) {
    const MatrixXd Hobs = observation_matrix(cfg_.observation);
    const ModelParams p = params_at(cfg_, belief_.mu);
    const auto& rm = cfg_.sensitivity.return_map;
    if (cfg_.replay_history) {
      z_ = MaterialState{};
      for (const Strain& de : history_) z_ = step(z_, de, p, cfg_.sensitivity.kind, rm).state;
    }
    const StepResult pred = step(z_, d_eps, p, cfg_.sensitivity.kind, rm);
    const MatrixXd A = Hobs * (cfg_.replay_history ? history_sensitivities(d_eps, p)
                                                   : sensitivities(z_, d_eps, p, cfg_.ids, cfg_.sensitivity));
    AssimilationInfo info;
    info.prediction = Hobs * pred.sigma;
    info.residual = datum - info.prediction;
    const UpdateResult up = cfg_.use_mask ? masked_update(belief_, A, info.residual, cfg_.R(), mask_)
                                          : ekf_update(belief_, A, info.residual, cfg_.R());
    info.regularized = up.regularized;
    belief_ = up.belief;
    history_.push_back(d_eps);
    z_ = step(z_, d_eps, params_at(cfg_, belief_.mu), cfg_.sensitivity.kind, rm).state;
    if (cfg_.use_mask) {
      mu_hist_.push_back(belief_.mu);
      var_hist_.push_back(belief_.Sigma.diagonal());
      while (static_cast<int>(mu_hist_.size()) > cfg_.window) mu_hist_.pop_front();
      while (var_hist_.size() > 2) var_hist_.pop_front();
      mask_ = update_mask(mask_, mu_hist_, var_hist_, cfg_.tol_cauchy, cfg_.window, &prior_var_,
                          cfg_.min_variance_reduction);
    }
    return info;
  }

  const ParameterBelief& belief() const { return belief_; }
  const VectorXd& mask() const { return mask_; }

  /// Total derivative of the current stress through the replayed history,
  /// by central differences.
  Sensitivity history_sensitivities(const Strain& d_eps, const ModelParams& p) const {
    const auto& rm = cfg_.sensitivity.return_map;
    auto run = [&](const ModelParams& q) {
      MaterialState z;
      for (const Strain& de : history_) z = step(z, de, q, cfg_.sensitivity.kind, rm).state;
      return step(z, d_eps, q, cfg_.sensitivity.kind, rm).sigma;
    };
    Sensitivity A(6, static_cast<Eigen::Index>(cfg_.ids.size()));
    for (std::size_t c = 0; c < cfg_.ids.size(); ++c) {
      const double v = p[cfg_.ids[c]];
      const double h = cfg_.sensitivity.rel_step * (v != 0.0 ? std::abs(v) : 1.0);
      ModelParams plus = p, minus = p;
      plus[cfg_.ids[c]] = v + h;
      minus[cfg_.ids[c]] = v - h;
      A.col(static_cast<Eigen::Index>(c)) = (run(plus) - run(minus)) / (2.0 * h);
    }
    return A;
  }
  const MaterialState& hidden_state() const { return z_; }
  const FilterConfig& config() const { return cfg_; }

 private:
  FilterConfig cfg_;
  ParameterBelief belief_;
  VectorXd prior_var_;
  VectorXd mask_;
  MaterialState z_;
  std::vector<Strain> history_;
  std::deque<VectorXd> mu_hist_;
  std::deque<VectorXd> var_hist_;
};

// -------------------------------------------------------- switching filter

struct ModeBelief {
  ParameterBelief belief;
  MaterialState z;
};

/// GPB2 switching filter over {elastic = 0, plastic = 1} submodels.
class SwitchingKf {
 public:
  SwitchingKf(FilterConfig cfg, const ParameterBelief& prior) : cfg_(std::move(cfg)), prob_(cfg_.mode_prob0) {
    if (static_cast<std::size_t>(prior.size()) != cfg_.ids.size()) throw FilterError("prior size mismatch");
    if (std::abs(prob_.sum() - 1.0) > 1e-12 || (prob_.array() < 0).any())
      throw FilterError("initial mode probabilities must be a distribution");
    for (int i = 0; i < 2; ++i)
      if (std::abs(cfg_.Z.row(i).sum() - 1.0) > 1e-12) throw FilterError("transition rows must sum to 1");
    modes_[0] = modes_[1] = ModeBelief{prior, MaterialState{}};
  }

  AssimilationInfo assimilate(const Strain& d_eps, const VectorXd& datum) {
    const MatrixXd Hobs = observation_matrix(cfg_.observation);
    const MatrixXd R = cfg_.R();
    struct Pair {
      bool ok = false;
      double logw = -std::numeric_limits<double>::infinity();
      ParameterBelief b;
      MaterialState z;
      VectorXd pred;
    };
    std::array<std::array<Pair, 2>, 2> pairs;
    AssimilationInfo info;
    for (int a = 0; a < 2; ++a) {
      if (prob_(a) <= 0.0) continue;
      const ModeBelief& src = modes_[a];
      const ModelParams p = params_at(cfg_, src.belief.mu);
      for (int m = 0; m < 2; ++m) {
        if (cfg_.Z(a, m) <= 0.0) continue;
        Pair& pr = pairs[a][m];
        SensitivityOptions so = cfg_.sensitivity;
        so.kind = cfg_.mode_kinds[m];
        try {
          const StepResult s = step(src.z, d_eps, p, so.kind, so.return_map);
          const MatrixXd A = Hobs * sensitivities(src.z, d_eps, p, cfg_.ids, so);
          pr.pred = Hobs * s.sigma;
          const UpdateResult up = ekf_update(src.belief, A, datum - pr.pred, R);
          info.regularized = info.regularized || up.regularized;
          pr.b = up.belief;
          try {
            pr.z = step(src.z, d_eps, params_at(cfg_, pr.b.mu), so.kind, so.return_map).state;
          } catch (const IntegrationError&) {
            pr.z = s.state;
          }
          pr.logw = up.log_likelihood + std::log(cfg_.Z(a, m)) + std::log(prob_(a));
          pr.ok = true;
        } catch (const IntegrationError&) {
          pr.ok = false;
        }
      }
    }

    // normalize the joint posterior over (a, m)
    double lmax = -std::numeric_limits<double>::infinity();
    int n_ok = 0;
    for (auto& row : pairs)
      for (auto& pr : row)
        if (pr.ok) {
          ++n_ok;
          if (std::isfinite(pr.logw)) lmax = std::max(lmax, pr.logw);
        }
    if (n_ok == 0) throw FilterError("switching filter: no mode could be evaluated");
    Eigen::Matrix2d W = Eigen::Matrix2d::Zero();
    if (!std::isfinite(lmax)) {
      info.likelihood_fallback = true;
      for (int a = 0; a < 2; ++a)
        for (int m = 0; m < 2; ++m)
          if (pairs[a][m].ok) W(a, m) = 1.0 / n_ok;
    } else {
      for (int a = 0; a < 2; ++a)
        for (int m = 0; m < 2; ++m)
          if (pairs[a][m].ok) W(a, m) = std::exp(pairs[a][m].logw - lmax);
      W /= W.sum();
    }
    Eigen::Vector2d prob = W.colwise().sum().transpose();

    // collapse per target mode by moment matching
    std::array<ModeBelief, 2> next = modes_;
    for (int m = 0; m < 2; ++m) {
      double tot = 0.0;
      for (int a = 0; a < 2; ++a) tot += pairs[a][m].ok ? W(a, m) : 0.0;
      std::array<double, 2> w{0.0, 0.0};
      if (tot > 0.0) {
        for (int a = 0; a < 2; ++a) w[a] = pairs[a][m].ok ? W(a, m) / tot : 0.0;
      } else {
        // unreachable mode this step: carry the best available pair forward
        int cnt = 0;
        for (int a = 0; a < 2; ++a) cnt += pairs[a][m].ok;
        if (cnt == 0) continue;
        for (int a = 0; a < 2; ++a) w[a] = pairs[a][m].ok ? 1.0 / cnt : 0.0;
      }
      next[m] = collapse(pairs[0][m].b, pairs[0][m].z, w[0], pairs[1][m].b, pairs[1][m].z, w[1]);
    }
    modes_ = next;
    if (cfg_.hard_assignment) {
      const int win = prob(1) > prob(0) ? 1 : 0;
      prob.setZero();
      prob(win) = 1.0;
    }
    prob_ = prob / prob.sum();

    const int best = most_probable();
    info.prediction = pairs[0][best].ok ? pairs[0][best].pred : pairs[1][best].pred;
    if (!pairs[0][best].ok && !pairs[1][best].ok) info.prediction = VectorXd::Zero(datum.size());
    info.residual = datum - info.prediction;
    return info;
  }

  int most_probable() const { return prob_(1) > prob_(0) ? 1 : 0; }
  const Eigen::Vector2d& mode_prob() const { return prob_; }
  const ModeBelief& mode(int m) const { return modes_[static_cast<std::size_t>(m)]; }
  const ParameterBelief& belief() const { return modes_[static_cast<std::size_t>(most_probable())].belief; }
  const MaterialState& hidden_state() const { return modes_[static_cast<std::size_t>(most_probable())].z; }
  const FilterConfig& config() const { return cfg_; }

 private:
  static ModeBelief collapse(const ParameterBelief& b0, const MaterialState& z0, double w0, const ParameterBelief& b1,
                             const MaterialState& z1, double w1) {
    if (w1 == 0.0) return {b0, z0};
    if (w0 == 0.0) return {b1, z1};
    ModeBelief out;
    out.belief.mu = w0 * b0.mu + w1 * b1.mu;
    const VectorXd d0 = b0.mu - out.belief.mu, d1 = b1.mu - out.belief.mu;
    out.belief.Sigma = w0 * (b0.Sigma + d0 * d0.transpose()) + w1 * (b1.Sigma + d1 * d1.transpose());
    detail::make_psd(out.belief.Sigma);
    out.z.eps = z0.eps;
    out.z.eps_p = w0 * z0.eps_p + w1 * z1.eps_p;
    out.z.ep = w0 * z0.ep + w1 * z1.ep;
    out.z.sigma = w0 * z0.sigma + w1 * z1.sigma;
    return out;
  }

  FilterConfig cfg_;
  std::array<ModeBelief, 2> modes_;
  Eigen::Vector2d prob_;
};

// ------------------------------------------------------- belief snapshots

inline constexpr const char* kBeliefMagic = "KFDOE-BELIEF";
inline constexpr int kBeliefVersion = 1;

/// Text snapshot: header line "KFDOE-BELIEF <version> <n>", then the mean on
/// one line and Sigma row by row, all with 17 significant digits.
inline void write_belief(std::ostream& os, const ParameterBelief& b) {
  os << kBeliefMagic << ' ' << kBeliefVersion << ' ' << b.size() << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < b.size(); ++i) os << (i ? " " : "") << b.mu(i);
  os << '\n';
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    for (Eigen::Index j = 0; j < b.size(); ++j) os << (j ? " " : "") << b.Sigma(i, j);
    os << '\n';
  }
}

inline ParameterBelief read_belief(std::istream& is) {
  std::string magic;
  int version = 0;
  Eigen::Index n = -1;
  if (!(is >> magic >> version >> n) || magic != kBeliefMagic) throw FormatError("belief snapshot: bad header");
  if (version != kBeliefVersion) throw FormatError("belief snapshot: unsupported version " + std::to_string(version));
  if (n < 0 || n > 1000) throw FormatError("belief snapshot: bad dimension");
  ParameterBelief b{VectorXd(n), MatrixXd(n, n)};
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(is >> b.mu(i))) throw FormatError("belief snapshot: truncated mean");
  for (Eigen::Index i = 0; i < n * n; ++i)
    if (!(is >> b.Sigma(i / n, i % n))) throw FormatError("belief snapshot: truncated covariance");
  return b;
}

}  // namespace kfdoe

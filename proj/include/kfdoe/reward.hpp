#pragma once

// Episode rewards: Gaussian KL information gain, the L1 Nash-Sutcliffe
// efficiency and their weighted mix.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "kfdoe/errors.hpp"
#include "kfdoe/kalman.hpp"

namespace kfdoe {

namespace detail {

// log det and solver of an SPD matrix; adds jitter 1e-12 * scale if needed.
struct SpdFactor {
  Eigen::LLT<MatrixXd> llt;
  double logdet = 0.0;
  bool jittered = false;
};

inline SpdFactor spd_factor(MatrixXd S) {
  SpdFactor f;
  const double scale = std::max(S.diagonal().cwiseAbs().maxCoeff(), 1.0);
  f.llt.compute(S);
  double jitter = 1e-12 * scale;
  while (f.llt.info() != Eigen::Success) {
    S.diagonal().array() += jitter;
    f.jittered = true;
    jitter *= 10.0;
    f.llt.compute(S);
    if (jitter > scale) throw FilterError("covariance is not positive semidefinite");
  }
  const MatrixXd L = f.llt.matrixL();
  f.logdet = 2.0 * L.diagonal().array().log().sum();
  return f;
}

}  // namespace detail

/// KL(N(muk, Sk) || N(mu0, S0)), the information gained relative to the prior.
inline double kl_gaussian(const VectorXd& mu0, const MatrixXd& S0, const VectorXd& muk, const MatrixXd& Sk,
                          bool* jittered = nullptr) {
  const auto n = mu0.size();
  if (S0.rows() != n || S0.cols() != n || muk.size() != n || Sk.rows() != n || Sk.cols() != n)
    throw FilterError("kl_gaussian: inconsistent dimensions");
  if (n == 0) return 0.0;
  const detail::SpdFactor f0 = detail::spd_factor(S0);
  const detail::SpdFactor fk = detail::spd_factor(Sk);
  if (jittered) *jittered = fk.jittered || f0.jittered;
  const VectorXd d = muk - mu0;
  const double tr = f0.llt.solve(Sk).trace();
  const double quad = d.dot(f0.llt.solve(d));
  return std::max(0.0, 0.5 * (f0.logdet - fk.logdet + tr + quad - static_cast<double>(n)));
}

inline double kl_gaussian(const ParameterBelief& prior, const ParameterBelief& post, bool* jittered = nullptr) {
  return kl_gaussian(prior.mu, prior.Sigma, post.mu, post.Sigma, jittered);
}

struct KlTrace {
  std::vector<double> kl;          // KL of each belief after the prior against the prior
  std::vector<double> increments;  // kl[k] - kl[k-1], with kl[-1] = 0
  double total = 0.0;
};

/// Per-step information gain along a belief trajectory that starts at the prior.
inline KlTrace kl_reward(const std::vector<ParameterBelief>& trajectory) {
  KlTrace t;
  if (trajectory.size() < 2) return t;
  const ParameterBelief& prior = trajectory.front();
  double prev = 0.0;
  for (std::size_t k = 1; k < trajectory.size(); ++k) {
    const double v = kl_gaussian(prior, trajectory[k]);
    t.kl.push_back(v);
    t.increments.push_back(v - prev);
    prev = v;
  }
  t.total = prev;
  return t;
}

/// 1 - sum|d - m| / sum|d - mean(d)| over all entries.
inline double nse(const VectorXd& data, const VectorXd& model) {
  if (data.size() != model.size()) throw DegenerateData("nse: data and model sizes differ");
  if (data.size() < 2) throw DegenerateData("nse: at least two data points are required");
  const double mean = data.mean();
  const double den = (data.array() - mean).abs().sum();
  if (!(den > 0.0)) throw DegenerateData("nse: reference data are constant");
  return 1.0 - (data - model).cwiseAbs().sum() / den;
}

/// Affine map of [lo, hi] onto [0, 1], clamped.
struct Rescale {
  double lo = 0.0;
  double hi = 1.0;

  double operator()(double x) const {
    if (!(hi > lo)) throw FormatError("rescale bounds must satisfy hi > lo");
    return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
  }
};

enum class RewardKind { KL, NSE, Mixed };

inline std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::KL: return "kl";
    case RewardKind::NSE: return "nse";
    default: return "mixed";
  }
}

inline RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "kl") return RewardKind::KL;
  if (s == "nse") return RewardKind::NSE;
  if (s == "mixed") return RewardKind::Mixed;
  throw FormatError("unknown reward kind '" + s + "'");
}

struct RewardConfig {
  RewardKind kind = RewardKind::KL;
  double w_nse = 0.5;
  double w_kl = 0.5;
  Rescale kl_scale{};
  Rescale nse_scale{};
  // When set, the scaled KL reward is 1 at or above this raw KL and 0 below.
  std::optional<double> kl_binary_threshold;

  void validate() const {
    if (w_nse < 0.0 || w_kl < 0.0 || w_nse > 1.0 || w_kl > 1.0 || std::abs(w_nse + w_kl - 1.0) > 1e-12)
      throw FormatError("reward weights must lie in [0,1] and sum to 1");
    if (!(kl_scale.hi > kl_scale.lo) || !(nse_scale.hi > nse_scale.lo))
      throw FormatError("rescale bounds must satisfy hi > lo");
  }

  double scaled_kl(double raw) const {
    if (kl_binary_threshold) return raw >= *kl_binary_threshold ? 1.0 : 0.0;
    return kl_scale(raw);
  }
  double scaled_nse(double raw) const { return nse_scale(raw); }
};

/// w_nse * rescaled NSE + w_kl * rescaled KL.
inline double mixed_reward(double r_nse, double r_kl, const RewardConfig& cfg) {
  cfg.validate();
  return cfg.w_nse * cfg.scaled_nse(r_nse) + cfg.w_kl * cfg.scaled_kl(r_kl);
}

/// The scaled episode reward in [0, 1] for the configured kind. The raw NSE
/// is only needed when the kind uses it.
inline double episode_reward(const RewardConfig& cfg, double raw_kl, std::optional<double> raw_nse) {
  switch (cfg.kind) {
    case RewardKind::KL: return cfg.scaled_kl(raw_kl);
    case RewardKind::NSE:
      if (!raw_nse) throw DegenerateData("NSE reward requested without a blind-test path");
      return cfg.scaled_nse(*raw_nse);
    default:
      if (!raw_nse) throw DegenerateData("mixed reward requested without a blind-test path");
      return mixed_reward(*raw_nse, raw_kl, cfg);
  }
}

}  // namespace kfdoe

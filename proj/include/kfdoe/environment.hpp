#pragma once

// The experiment-design game: a fixed-depth decision tree whose edges are
// strain increments applied to a synthetic specimen, with a Kalman calibrator
// consuming the measured stresses.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "kfdoe/constitutive.hpp"
#include "kfdoe/errors.hpp"
#include "kfdoe/kalman.hpp"
#include "kfdoe/reward.hpp"

namespace kfdoe {

enum class GameKind { ElasticVolDev, VonMisesPiPlane, HillFullStrain };
enum class EncodeMode { HistoryOnly, HistoryPlusBelief };
enum class FilterKind { Masked, Switching };
// Which switching-filter belief the KL reward is measured on.
enum class KlMode { MostProbable, Elastic, Plastic };

inline std::string to_string(GameKind g) {
  switch (g) {
    case GameKind::ElasticVolDev: return "elastic_voldev";
    case GameKind::VonMisesPiPlane: return "vonmises_pi_plane";
    default: return "hill_full_strain";
  }
}

inline GameKind game_kind_from_string(const std::string& s) {
  if (s == "elastic_voldev") return GameKind::ElasticVolDev;
  if (s == "vonmises_pi_plane") return GameKind::VonMisesPiPlane;
  if (s == "hill_full_strain") return GameKind::HillFullStrain;
  throw FormatError("unknown game '" + s + "'");
}

inline std::string to_string(FilterKind f) { return f == FilterKind::Masked ? "masked" : "switching"; }

inline FilterKind filter_kind_from_string(const std::string& s) {
  if (s == "masked") return FilterKind::Masked;
  if (s == "switching") return FilterKind::Switching;
  throw FormatError("unknown filter '" + s + "'");
}

/// One signed Voigt component of the full-strain game.
struct StrainAction {
  int voigt = V11;
  int sign = 1;
};

/// Codes 1-6 raise (11, 22, 33, 12, 23, 13), codes 7-12 lower them.
inline std::vector<StrainAction> default_hill_actions() {
  const std::array<int, 6> order{V11, V22, V33, V12, V23, V13};
  std::vector<StrainAction> t;
  for (int s : {1, -1})
    for (int v : order) t.push_back({v, s});
  return t;
}

struct PriorSpec {
  double mean_scale = 0.5;
  double rel_std = 0.5;
  double yield_scale = 0.0;  // > 0 overrides mean_scale for Y0 and H
};

struct GameSpec {
  std::string name = "custom";
  GameKind game = GameKind::VonMisesPiPlane;
  int n_steps = 6;
  int action_count = 4;
  double d_eps = 0.04;
  int substeps = 10;
  ModelParams truth;
  FilterConfig filter;  // ids are the calibrated parameters; base supplies the rest
  FilterKind filter_kind = FilterKind::Switching;
  KlMode kl_mode = KlMode::MostProbable;
  PriorSpec prior;
  double obs_noise_std = 0.0;
  RewardConfig reward;
  std::vector<Strain> blind_path;  // strain increments of the blind test
  std::vector<StrainAction> strain_actions = default_hill_actions();
  EncodeMode encode = EncodeMode::HistoryOnly;

  void validate() const {
    if (n_steps < 1 || action_count < 1 || substeps < 1) throw FormatError(name + ": sizes must be positive");
    if (!(d_eps > 0.0)) throw FormatError(name + ": strain increment must be positive");
    if (filter.ids.empty()) throw FormatError(name + ": no calibrated parameters");
    const int expected = game == GameKind::ElasticVolDev ? 2 : game == GameKind::VonMisesPiPlane ? 4 : 12;
    if (action_count != expected) throw FormatError(name + ": wrong action count for " + to_string(game));
    if (game == GameKind::HillFullStrain && static_cast<int>(strain_actions.size()) != action_count)
      throw FormatError(name + ": strain action table must have one entry per code");
    if (obs_noise_std < 0.0) throw FormatError(name + ": negative noise");
    reward.validate();
    if (reward.kind != RewardKind::KL && blind_path.empty())
      throw FormatError(name + ": NSE-based reward requires a blind path");
  }
};

/// (all nodes, leaves) of a tree with `actions` children per node and depth `steps`.
inline std::pair<std::uint64_t, std::uint64_t> tree_counts(int actions, int steps) {
  std::uint64_t total = 0, level = 1;
  for (int k = 0; k <= steps; ++k) {
    total += level;
    if (k < steps) level *= static_cast<std::uint64_t>(actions);
  }
  return {total, level};
}

inline std::pair<std::uint64_t, std::uint64_t> tree_counts(const GameSpec& g) {
  return tree_counts(g.action_count, g.n_steps);
}

/// Legal codes at a node with `taken` actions already applied.
inline std::vector<int> legal_actions(const GameSpec& g, int taken) {
  std::vector<int> a;
  if (taken >= g.n_steps) return a;
  for (int c = 1; c <= g.action_count; ++c) a.push_back(c);
  return a;
}

inline Strain action_to_strain(int code, const GameSpec& g) {
  if (code < 1 || code > g.action_count) throw FormatError("action code out of range: " + std::to_string(code));
  const double d = g.d_eps;
  Strain e = Strain::Zero();
  switch (g.game) {
    case GameKind::ElasticVolDev:
      if (code == 1) {
        e.head(3).setConstant(d / 3.0);
      } else {
        e(V12) = d;
      }
      break;
    case GameKind::VonMisesPiPlane: {
      const int axis = (code - 1) % 2;
      const double s = code <= 2 ? 1.0 : -1.0;
      e(axis) = s * d;
      e(V33) = -s * d;
      break;
    }
    case GameKind::HillFullStrain: {
      const StrainAction& a = g.strain_actions[static_cast<std::size_t>(code - 1)];
      e(a.voigt) = a.sign * d;
      break;
    }
  }
  return e;
}

inline std::string describe_action(int code, const GameSpec& g) {
  static const std::array<const char*, 6> names{"11", "22", "33", "23", "13", "12"};
  switch (g.game) {
    case GameKind::ElasticVolDev: return code == 1 ? "volumetric" : "shear";
    case GameKind::VonMisesPiPlane: return std::string(code <= 2 ? "+" : "-") + "eps" + std::to_string((code - 1) % 2 + 1);
    default: {
      const StrainAction& a = g.strain_actions[static_cast<std::size_t>(code - 1)];
      return std::string(a.sign > 0 ? "+" : "-") + "eps" + names[static_cast<std::size_t>(a.voigt)];
    }
  }
}

inline ParameterBelief game_prior(const GameSpec& g) {
  return prior_from_truth(g.filter, g.truth, g.prior.mean_scale, g.prior.rel_std, g.prior.yield_scale);
}

/// Either filter behind one interface.
class Calibrator {
 public:
  Calibrator(const GameSpec& g, const ParameterBelief& prior, std::optional<FilterKind> kind = std::nullopt)
      : f_(make(g, prior, kind.value_or(g.filter_kind))), kl_mode_(g.kl_mode) {}

  AssimilationInfo assimilate(const Strain& de, const VectorXd& datum) {
    return std::visit([&](auto& f) { return f.assimilate(de, datum); }, f_);
  }

  /// The belief the reward is computed on.
  const ParameterBelief& belief() const {
    if (const auto* m = std::get_if<MaskedEkf>(&f_)) return m->belief();
    const auto& s = std::get<SwitchingKf>(f_);
    switch (kl_mode_) {
      case KlMode::Elastic: return s.mode(0).belief;
      case KlMode::Plastic: return s.mode(1).belief;
      default: return s.belief();
    }
  }

  /// Elastic/plastic probabilities; (1, 0) for the masked filter.
  Eigen::Vector2d mode_prob() const {
    if (const auto* s = std::get_if<SwitchingKf>(&f_)) return s->mode_prob();
    return {1.0, 0.0};
  }

  bool switching() const { return std::holds_alternative<SwitchingKf>(f_); }

 private:
  using Filter = std::variant<MaskedEkf, SwitchingKf>;
  static Filter make(const GameSpec& g, const ParameterBelief& prior, FilterKind k) {
    if (k == FilterKind::Masked) return MaskedEkf(g.filter, prior);
    return SwitchingKf(g.filter, prior);
  }

  Filter f_;
  KlMode kl_mode_;
};

/// One filter sub-step.
struct StepRecord {
  int action_index = 0;  // 0-based decision index
  int code = 0;
  int substep = 0;
  Strain strain;  // total strain after the sub-step
  VectorXd datum;
  VectorXd prediction;
  VectorXd mu;
  VectorXd sigma_diag;
  Eigen::Vector2d mode_prob;
  StepMode true_mode = StepMode::Elastic;
};

struct StepOutcome {
  double delta_kl = 0.0;
  double kl = 0.0;
};

struct EpisodeResult {
  std::vector<int> path;
  ParameterBelief prior;
  ParameterBelief belief;
  KlTrace kl;
  std::optional<double> raw_nse;
  double score = 0.0;  // scaled reward in [0, 1]
};

/// The MDP state: action history, specimen state and calibrator.
class Episode {
 public:
  explicit Episode(GameSpec spec, std::uint64_t seed = 0,
                   std::optional<FilterKind> filter = std::nullopt)
      : g_(std::move(spec)), prior_(game_prior(g_)), cal_(g_, prior_, filter), rng_(seed) {
    history_.assign(static_cast<std::size_t>(g_.n_steps), 0);
    beliefs_.push_back(prior_);
  }

  const GameSpec& spec() const { return g_; }
  const std::vector<int>& history() const { return history_; }
  int steps_taken() const { return taken_; }
  bool terminal() const { return taken_ >= g_.n_steps; }
  std::vector<int> legal() const { return legal_actions(g_, taken_); }
  const MaterialState& material() const { return material_; }
  const ParameterBelief& prior() const { return prior_; }
  const ParameterBelief& belief() const { return cal_.belief(); }
  const Calibrator& calibrator() const { return cal_; }
  const std::vector<StepRecord>& records() const { return records_; }
  const std::vector<ParameterBelief>& belief_trajectory() const { return beliefs_; }

  StepOutcome step(int code) {
    if (terminal()) throw FormatError("step on a terminal state");
    if (code < 1 || code > g_.action_count) throw FormatError("illegal action " + std::to_string(code));
    const Strain de = action_to_strain(code, g_) / g_.substeps;
    const MatrixXd Hobs = observation_matrix(g_.filter.observation);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int s = 0; s < g_.substeps; ++s) {
      const StepResult r = integrate_step(material_, de, g_.truth);
      material_ = r.state;
      VectorXd datum = Hobs * r.sigma;
      if (g_.obs_noise_std > 0.0)
        for (Eigen::Index i = 0; i < datum.size(); ++i) datum(i) += g_.obs_noise_std * noise(rng_);
      const AssimilationInfo info = cal_.assimilate(de, datum);
      const ParameterBelief& b = cal_.belief();
      records_.push_back({taken_, code, s, material_.eps, datum, info.prediction, b.mu, b.Sigma.diagonal(),
                          cal_.mode_prob(), r.mode});
    }
    history_[static_cast<std::size_t>(taken_)] = code;
    ++taken_;
    beliefs_.push_back(cal_.belief());
    const double kl = kl_gaussian(prior_, beliefs_.back());
    StepOutcome out{kl - last_kl_, kl};
    last_kl_ = kl;
    return out;
  }

  /// Network input for this node.
  VectorXd encode() const { return encode_state(history_, g_, &cal_.belief()); }

  static VectorXd encode_state(const std::vector<int>& history, const GameSpec& g,
                               const ParameterBelief* belief = nullptr) {
    const auto n = static_cast<Eigen::Index>(history.size());
    if (g.encode == EncodeMode::HistoryOnly || belief == nullptr) {
      VectorXd x(n);
      for (Eigen::Index i = 0; i < n; ++i) x(i) = history[static_cast<std::size_t>(i)];
      return x;
    }
    const Eigen::Index m = belief->size();
    VectorXd x(n + m + m * (m + 1) / 2);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = history[static_cast<std::size_t>(i)];
    x.segment(n, m) = belief->mu;
    Eigen::Index k = n + m;
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = i; j < m; ++j) x(k++) = belief->Sigma(i, j);
    return x;
  }

  static Eigen::Index feature_dim(const GameSpec& g) {
    const auto m = static_cast<Eigen::Index>(g.filter.ids.size());
    return g.encode == EncodeMode::HistoryOnly ? g.n_steps : g.n_steps + m + m * (m + 1) / 2;
  }

  /// Scores a finished episode. NSE compares truth and calibrated model on the blind path.
  EpisodeResult finish() const {
    if (!terminal()) throw FormatError("finish called before the episode ended");
    EpisodeResult r;
    r.path = history_;
    r.prior = prior_;
    r.belief = cal_.belief();
    r.kl = kl_reward(beliefs_);
    if (!g_.blind_path.empty()) r.raw_nse = blind_nse(params_at(g_.filter, r.belief.mu));
    r.score = episode_reward(g_.reward, r.kl.total, r.raw_nse);
    return r;
  }

  double blind_nse(const ModelParams& model) const;

 private:
  GameSpec g_;
  ParameterBelief prior_;
  Calibrator cal_;
  std::mt19937_64 rng_;
  MaterialState material_;
  std::vector<int> history_;
  int taken_ = 0;
  double last_kl_ = 0.0;
  std::vector<StepRecord> records_;
  std::vector<ParameterBelief> beliefs_;
};

/// NSE of `model` against the truth over the blind-test strain program.
inline double blind_nse(const GameSpec& g, const ModelParams& model) {
  const auto n = static_cast<Eigen::Index>(g.blind_path.size());
  VectorXd d(6 * n), m(6 * n);
  MaterialState a, b;
  for (Eigen::Index k = 0; k < n; ++k) {
    a = integrate_step(a, g.blind_path[static_cast<std::size_t>(k)], g.truth).state;
    b = integrate_step(b, g.blind_path[static_cast<std::size_t>(k)], model).state;
    d.segment(6 * k, 6) = a.sigma;
    m.segment(6 * k, 6) = b.sigma;
  }
  return nse(d, m);
}

inline double Episode::blind_nse(const ModelParams& model) const { return kfdoe::blind_nse(g_, model); }

/// Plays a whole path and scores it.
inline EpisodeResult play_path(const GameSpec& g, const std::vector<int>& path, std::uint64_t seed = 0,
                               std::optional<FilterKind> filter = std::nullopt) {
  if (static_cast<int>(path.size()) != g.n_steps) throw FormatError("path length does not match the game depth");
  Episode e(g, seed, filter);
  for (int c : path) e.step(c);
  return e.finish();
}

/// Piecewise-linear strain program: each leg is split into `n` equal increments.
inline std::vector<Strain> strain_program(const std::vector<Strain>& legs, int n) {
  std::vector<Strain> out;
  for (const Strain& l : legs)
    for (int i = 0; i < n; ++i) out.push_back(l / n);
  return out;
}

}  // namespace kfdoe

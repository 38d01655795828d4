#pragma once

// Self-play training: MCTS-guided episodes generate (state, visit policy,
// reward) examples, the network is refitted after each iteration, and the
// trained policy is rolled out greedily to design an experiment.

#include <Eigen/Dense>

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "kfdoe/environment.hpp"
#include "kfdoe/errors.hpp"
#include "kfdoe/mcts.hpp"
#include "kfdoe/policynet.hpp"

namespace kfdoe {

struct TrainSchedule {
  int iterations = 10;
  int episodes = 10;
  double c_puct_start = 10.0;
  double c_puct_end = 1.0;
  int n_simulations = 25;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  double failure_budget = 0.2;  // fraction of discarded episodes tolerated per iteration
  int parallel = 1;

  void validate() const {
    if (iterations < 1 || episodes < 1) throw FormatError("schedule needs at least one iteration and episode");
    if (!(c_puct_end > 0.0) || c_puct_end > c_puct_start) throw FormatError("c_puct must satisfy 0 < end <= start");
    if (n_simulations < 1) throw FormatError("n_simulations must be >= 1");
    if (!(temperature >= 0.0)) throw FormatError("temperature must be >= 0");
    if (!(failure_budget >= 0.0 && failure_budget <= 1.0)) throw FormatError("failure budget must lie in [0, 1]");
    if (parallel < 1) throw FormatError("parallel must be >= 1");
  }

  /// Linear from start at the first iteration to end at the last.
  double c_puct_at(int iteration) const {
    if (iterations == 1) return c_puct_start;
    const double t = static_cast<double>(iteration) / (iterations - 1);
    return c_puct_start + t * (c_puct_end - c_puct_start);
  }
};

/// Distinct reproducible seed for (base, a, b).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq s{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                  static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::array<std::uint32_t, 2> out{};
  s.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Thread-safe cache of leaf rewards, shared by the episodes of one iteration.
class RewardCache {
 public:
  explicit RewardCache(const GameSpec& g) : g_(g) {}

  double operator()(const std::vector<int>& path) {
    {
      std::lock_guard<std::mutex> lock(m_);
      const auto it = c_.find(path);
      if (it != c_.end()) return it->second;
    }
    const double r = play_path(g_, path).score;
    std::lock_guard<std::mutex> lock(m_);
    c_.emplace(path, r);
    return r;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(m_);
    return c_.size();
  }

 private:
  const GameSpec& g_;
  mutable std::mutex m_;
  std::map<std::vector<int>, double> c_;
};

/// Network features for a node given the codes taken so far.
inline VectorXd node_features(const GameSpec& g, const std::vector<int>& taken) {
  std::vector<int> h(taken);
  h.resize(static_cast<std::size_t>(g.n_steps), 0);
  if (g.encode == EncodeMode::HistoryOnly) return Episode::encode_state(h, g);
  Episode e(g);
  for (int c : taken) e.step(c);
  return e.encode();
}

inline Evaluator network_evaluator(const PolicyValueNet& net, const GameSpec& g) {
  return [&net, &g](const std::vector<int>& taken) {
    const NetOutput o = net.forward(node_features(g, taken));
    return NodeEvaluation{o.policy, o.value};
  };
}

struct EpisodeOutcome {
  std::vector<TrainExample> examples;
  EpisodeResult result;
  std::vector<StepRecord> records;
  std::vector<VectorXd> visit_policies;
  int failed_leaves = 0;
};

/// One self-play game: at each decision run MCTS from the current node,
/// sample the next code from the visit policy and record the example.
inline EpisodeOutcome run_episode(const PolicyValueNet& net, const GameSpec& g, const SearchConfig& sc,
                                  std::uint64_t seed, RewardCache* cache = nullptr) {
  sc.validate();
  std::optional<RewardCache> own;
  if (!cache) cache = &own.emplace(g);
  const Evaluator eval = network_evaluator(net, g);
  const TerminalReward terminal = [cache](const std::vector<int>& p) { return (*cache)(p); };
  std::mt19937_64 rng(seed);
  SearchTree tree(g.action_count, g.n_steps);
  Episode env(g, seed);
  EpisodeOutcome out;
  std::vector<int> taken;
  while (!env.terminal()) {
    const VectorXd x = node_features(g, taken);
    tree.search(taken, eval, terminal, sc);
    const VectorXd pi = policy_from_visits(tree.visits(taken), sc.temperature);
    Eigen::Index a = 0;
    if (sc.temperature > 0.0)
      a = sample_index(pi, rng);
    else
      pi.maxCoeff(&a);
    out.examples.push_back({x, pi, 0.0});
    out.visit_policies.push_back(pi);
    env.step(static_cast<int>(a) + 1);
    taken.push_back(static_cast<int>(a) + 1);
  }
  out.result = env.finish();
  out.records = env.records();
  out.failed_leaves = tree.failed_terminals();
  for (auto& e : out.examples) e.value = 2.0 * out.result.score - 1.0;
  return out;
}

/// Greedy rollout of the network policy; ties go to the lower code.
inline std::vector<int> design_experiment(const PolicyValueNet& net, const GameSpec& g) {
  std::vector<int> taken;
  std::optional<Episode> e;
  if (g.encode != EncodeMode::HistoryOnly) e.emplace(g);
  while (static_cast<int>(taken.size()) < g.n_steps) {
    const VectorXd x = e ? e->encode() : node_features(g, taken);
    const VectorXd p = net.forward(x).policy;
    Eigen::Index a = 0;
    p.maxCoeff(&a);
    taken.push_back(static_cast<int>(a) + 1);
    if (e) e->step(taken.back());
  }
  return taken;
}

/// Probability of a complete path under the network policy.
inline double path_probability(const PolicyValueNet& net, const GameSpec& g, const std::vector<int>& path) {
  double p = 1.0;
  std::vector<int> taken;
  for (int c : path) {
    p *= net.forward(node_features(g, taken)).policy(c - 1);
    taken.push_back(c);
  }
  return p;
}

struct CalibrationReport {
  EpisodeResult result;
  std::vector<StepRecord> records;
};

/// Replays a path through the specimen and the chosen filter. A filter
/// failure is reported with the belief means seen so far.
inline CalibrationReport calibrate_path(const std::vector<int>& path, const GameSpec& g,
                                        std::optional<FilterKind> filter = std::nullopt) {
  if (static_cast<int>(path.size()) != g.n_steps) throw FormatError("path length does not match the game depth");
  Episode e(g, 0, filter);
  try {
    for (int c : path) e.step(c);
  } catch (const FilterError& err) {
    std::ostringstream os;
    os << err.what() << "; belief means before failure:";
    for (const auto& r : e.records()) {
      os << " [";
      for (Eigen::Index i = 0; i < r.mu.size(); ++i) os << (i ? "," : "") << r.mu(i);
      os << "]";
    }
    throw FilterError(os.str());
  }
  return {e.finish(), e.records()};
}

/// Filters a measured record: total strains and stresses per step (Voigt).
inline CalibrationReport calibrate_record(const GameSpec& g, const std::vector<Strain>& strain,
                                          const std::vector<Stress>& stress,
                                          std::optional<FilterKind> filter = std::nullopt) {
  if (strain.size() != stress.size() || strain.empty()) throw FormatError("record needs matching, non-empty rows");
  const ParameterBelief prior = game_prior(g);
  Calibrator cal(g, prior, filter);
  const MatrixXd H = observation_matrix(g.filter.observation);
  std::vector<ParameterBelief> traj{prior};
  CalibrationReport rep;
  Strain prev = Strain::Zero();
  for (std::size_t k = 0; k < strain.size(); ++k) {
    const VectorXd datum = H * stress[k];
    const AssimilationInfo info = cal.assimilate(strain[k] - prev, datum);
    prev = strain[k];
    traj.push_back(cal.belief());
    rep.records.push_back({0, 0, static_cast<int>(k), strain[k], datum, info.prediction, cal.belief().mu,
                           cal.belief().Sigma.diagonal(), cal.mode_prob(), StepMode::Elastic});
  }
  rep.result.prior = prior;
  rep.result.belief = cal.belief();
  rep.result.kl = kl_reward(traj);
  if (!g.blind_path.empty()) rep.result.raw_nse = blind_nse(g, params_at(g.filter, rep.result.belief.mu));
  rep.result.score = episode_reward(g.reward, rep.result.kl.total, rep.result.raw_nse);
  return rep;
}

struct IterationReport {
  int iteration = 0;
  double c_puct = 0.0;
  std::vector<double> scores;  // kept episodes, in episode order
  std::vector<int> episode_ids;
  std::vector<std::vector<int>> paths;
  int failed = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  std::vector<int> greedy;
  VectorXd greedy_mu;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

struct TrainingResult {
  PolicyValueNet net;
  std::vector<IterationReport> reports;
};

struct TrainingHooks {
  // Called after every kept episode, serialised by the trainer.
  std::function<void(int iteration, int episode, const EpisodeOutcome&)> on_episode;
  std::function<void(const IterationReport&, const PolicyValueNet&)> on_iteration;
};

inline TrainingResult run_training(const TrainSchedule& s, const GameSpec& g, const NetConfig& nc,
                                   const TrainingHooks& hooks = {}) {
  s.validate();
  g.validate();
  NetConfig cfg = nc;
  cfg.input_dim = static_cast<int>(Episode::feature_dim(g));
  cfg.policy_dim = g.action_count;
  TrainingResult res{PolicyValueNet(cfg), {}};
  std::mutex hook_mutex;

  for (int it = 0; it < s.iterations; ++it) {
    IterationReport rep;
    rep.iteration = it;
    rep.c_puct = s.c_puct_at(it);
    const SearchConfig sc{s.n_simulations, rep.c_puct, s.temperature};
    RewardCache cache(g);
    const PolicyValueNet snapshot = res.net;
    std::vector<std::optional<EpisodeOutcome>> outcomes(static_cast<std::size_t>(s.episodes));
    std::vector<std::string> errors(static_cast<std::size_t>(s.episodes));
    std::atomic<int> next{0};
    auto worker = [&] {
      for (int e = next++; e < s.episodes; e = next++) {
        try {
          outcomes[static_cast<std::size_t>(e)] =
              run_episode(snapshot, g, sc, derive_seed(s.seed, static_cast<std::uint64_t>(it), e), &cache);
        } catch (const Error& err) {
          errors[static_cast<std::size_t>(e)] = err.what();
        }
      }
    };
    const int nthreads = std::min(s.parallel, s.episodes);
    std::vector<std::thread> pool;
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<TrainExample> examples;
    for (int e = 0; e < s.episodes; ++e) {
      auto& o = outcomes[static_cast<std::size_t>(e)];
      if (!o) {
        ++rep.failed;
        continue;
      }
      rep.scores.push_back(o->result.score);
      rep.episode_ids.push_back(e);
      rep.paths.push_back(o->result.path);
      examples.insert(examples.end(), o->examples.begin(), o->examples.end());
      if (hooks.on_episode) {
        std::lock_guard<std::mutex> lock(hook_mutex);
        hooks.on_episode(it, e, *o);
      }
    }
    if (rep.failed > s.failure_budget * s.episodes) {
      std::string first;
      for (const auto& m : errors)
        if (!m.empty()) {
          first = m;
          break;
        }
      throw TrainingError("iteration " + std::to_string(it) + ": " + std::to_string(rep.failed) +
                          " episodes failed (first: " + first + ")");
    }
    std::tie(rep.mean, rep.stddev) = mean_std(rep.scores);
    if (!examples.empty()) {
      rep.loss_before = res.net.loss(examples);
      res.net.train(examples, derive_seed(s.seed, static_cast<std::uint64_t>(it), 0xA11CE));
      rep.loss_after = res.net.loss(examples);
    }
    rep.greedy = design_experiment(res.net, g);
    try {
      rep.greedy_mu = calibrate_path(rep.greedy, g).result.belief.mu;
    } catch (const Error&) {
      rep.greedy_mu = VectorXd();
    }
    if (hooks.on_iteration) hooks.on_iteration(rep, res.net);
    res.reports.push_back(rep);
  }
  return res;
}

}  // namespace kfdoe

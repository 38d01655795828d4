#pragma once

// PUCT tree search over action histories. Nodes are keyed by the codes taken
// so far; values live on [-1, 1] (terminal rewards r in [0, 1] enter as 2r - 1).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "kfdoe/errors.hpp"

namespace kfdoe {

using Eigen::VectorXd;

struct SearchConfig {
  int n_simulations = 25;
  double c_puct = 1.0;
  double temperature = 1.0;

  void validate() const {
    if (n_simulations < 1) throw FormatError("n_simulations must be >= 1");
    if (!(c_puct > 0.0)) throw FormatError("c_puct must be positive");
    if (!(temperature >= 0.0)) throw FormatError("temperature must be >= 0");
  }
};

/// Index (0-based) of the legal action maximizing
///   Q + c p sqrt(sum N) / (1 + N),
/// ties going to the higher prior and then the lower index.
inline int select_action(const std::vector<int>& N, const std::vector<double>& Q, const std::vector<double>& P,
                         double c_puct) {
  if (N.empty() || N.size() != Q.size() || N.size() != P.size()) throw FormatError("select_action: bad statistics");
  double total = 0.0;
  for (int n : N) total += n;
  const double root = std::sqrt(total);
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < N.size(); ++a) {
    const double s = Q[a] + c_puct * P[a] * root / (1.0 + N[a]);
    if (s > best_score || (s == best_score && P[a] > P[static_cast<std::size_t>(best)])) {
      best = static_cast<int>(a);
      best_score = s;
    }
  }
  return best;
}

/// pi(a) proportional to N(a)^(1/tau); tau = 0 is the argmax limit with ties
/// shared uniformly.
inline VectorXd policy_from_visits(const std::vector<int>& N, double tau) {
  if (N.empty()) throw FormatError("policy_from_visits: no actions");
  int max_n = 0;
  for (int n : N) {
    if (n < 0) throw FormatError("policy_from_visits: negative count");
    max_n = std::max(max_n, n);
  }
  if (max_n == 0) throw FormatError("policy_from_visits: all visit counts are zero");
  VectorXd pi(static_cast<Eigen::Index>(N.size()));
  for (std::size_t a = 0; a < N.size(); ++a) {
    const auto i = static_cast<Eigen::Index>(a);
    if (tau == 0.0)
      pi(i) = N[a] == max_n ? 1.0 : 0.0;
    else
      pi(i) = std::pow(static_cast<double>(N[a]) / max_n, 1.0 / tau);
  }
  return pi / pi.sum();
}

/// Draws a 0-based index from a probability vector.
template <class Rng>
int sample_index(const VectorXd& pi, Rng& rng) {
  std::discrete_distribution<int> d(pi.data(), pi.data() + pi.size());
  return d(rng);
}

/// Network output at a non-terminal node: priors over all codes and a value.
struct NodeEvaluation {
  VectorXd priors;
  double value = 0.0;
};

using Evaluator = std::function<NodeEvaluation(const std::vector<int>& history)>;
// Scaled reward in [0, 1] of a complete path.
using TerminalReward = std::function<double(const std::vector<int>& path)>;

class SearchTree {
 public:
  struct Node {
    std::vector<int> N;
    std::vector<double> W, Q, P;
  };

  SearchTree(int action_count, int n_steps) : actions_(action_count), depth_(n_steps) {
    if (action_count < 1 || n_steps < 1) throw FormatError("search tree needs actions and depth");
  }

  int action_count() const { return actions_; }
  int depth() const { return depth_; }

  /// One descent from `root`, expansion or terminal evaluation, and backup.
  void simulate(const std::vector<int>& root, const Evaluator& eval, const TerminalReward& terminal, double c_puct) {
    if (static_cast<int>(root.size()) >= depth_) throw FormatError("search root is terminal");
    std::vector<int> state = root;
    std::vector<std::pair<Node*, int>> trail;
    double value = 0.0;
    while (true) {
      if (static_cast<int>(state.size()) == depth_) {
        value = 2.0 * terminal_value(state, terminal) - 1.0;
        break;
      }
      auto it = nodes_.find(state);
      if (it == nodes_.end()) {
        // The search root is expanded on the way down; any other new node ends the descent.
        double v = 0.0;
        it = expand(state, eval, v);
        if (!trail.empty()) {
          value = v;
          break;
        }
      }
      Node& n = it->second;
      const int a = select_action(n.N, n.Q, n.P, c_puct);
      trail.emplace_back(&n, a);
      state.push_back(a + 1);
    }
    for (auto& [n, a] : trail) {
      const auto i = static_cast<std::size_t>(a);
      n->N[i] += 1;
      n->W[i] += value;
      n->Q[i] = n->W[i] / n->N[i];
    }
  }

  void search(const std::vector<int>& root, const Evaluator& eval, const TerminalReward& terminal,
              const SearchConfig& cfg) {
    cfg.validate();
    for (int s = 0; s < cfg.n_simulations; ++s) simulate(root, eval, terminal, cfg.c_puct);
  }

  const Node* node(const std::vector<int>& state) const {
    const auto it = nodes_.find(state);
    return it == nodes_.end() ? nullptr : &it->second;
  }

  std::vector<int> visits(const std::vector<int>& state) const {
    const Node* n = node(state);
    return n ? n->N : std::vector<int>(static_cast<std::size_t>(actions_), 0);
  }

  std::size_t size() const { return nodes_.size(); }
  const std::map<std::vector<int>, double>& terminal_cache() const { return cache_; }
  int failed_terminals() const { return failures_; }

  /// One line per edge: "state=<codes> a=<code> N=.. Q=.. P=..".
  void dump(std::ostream& os) const {
    for (const auto& [key, n] : nodes_) {
      std::string k;
      for (int c : key) k += (k.empty() ? "" : ",") + std::to_string(c);
      for (int a = 0; a < actions_; ++a) {
        const auto i = static_cast<std::size_t>(a);
        os << "state=" << (k.empty() ? "root" : k) << " a=" << a + 1 << " N=" << n.N[i] << " Q=" << n.Q[i]
           << " P=" << n.P[i] << '\n';
      }
    }
  }

 private:
  std::map<std::vector<int>, Node>::iterator expand(const std::vector<int>& state, const Evaluator& eval,
                                                    double& value) {
    const NodeEvaluation e = eval(state);
    if (e.priors.size() != actions_ || !e.priors.allFinite() || (e.priors.array() < 0.0).any() ||
        !std::isfinite(e.value))
      throw FormatError("evaluator returned malformed priors or value");
    Node n;
    n.N.assign(static_cast<std::size_t>(actions_), 0);
    n.W.assign(static_cast<std::size_t>(actions_), 0.0);
    n.Q.assign(static_cast<std::size_t>(actions_), 0.0);
    const double s = e.priors.sum();
    for (int a = 0; a < actions_; ++a) n.P.push_back(s > 0.0 ? e.priors(a) / s : 1.0 / actions_);
    value = e.value;
    return nodes_.emplace(state, std::move(n)).first;
  }

  // Rewards are cached per leaf; a leaf whose calibration fails scores 0.
  double terminal_value(const std::vector<int>& path, const TerminalReward& terminal) {
    const auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    double r = 0.0;
    try {
      r = terminal(path);
      if (!std::isfinite(r)) throw DegenerateData("non-finite reward");
    } catch (const Error&) {
      r = 0.0;
      ++failures_;
    }
    cache_.emplace(path, r);
    return r;
  }

  int actions_;
  int depth_;
  std::map<std::vector<int>, Node> nodes_;
  std::map<std::vector<int>, double> cache_;
  int failures_ = 0;
};

}  // namespace kfdoe

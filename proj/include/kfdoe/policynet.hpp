#pragma once

// Policy-value network: a ReLU multilayer perceptron with a softmax policy
// head and a tanh value head, fitted by mini-batch Adam on squared error.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kfdoe/errors.hpp"

namespace kfdoe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct NetConfig {
  int input_dim = 2;
  std::vector<int> hidden{50, 50};
  int policy_dim = 2;
  std::uint64_t seed = 0;
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (input_dim < 1 || policy_dim < 1) throw FormatError("network input and policy sizes must be positive");
    for (int h : hidden)
      if (h < 1) throw FormatError("hidden layer widths must be positive");
    if (epochs < 0 || batch_size < 1) throw FormatError("epochs must be >= 0 and batch size >= 1");
    if (!(learning_rate > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(epsilon > 0.0))
      throw FormatError("invalid Adam constants");
  }

  bool operator==(const NetConfig&) const = default;
};

struct TrainExample {
  VectorXd features;
  VectorXd policy;  // target distribution over action codes 1..policy_dim
  double value = 0.0;  // target in [-1, 1]
};

struct NetOutput {
  VectorXd policy;
  double value = 0.0;
};

/// Softmax with max subtraction.
inline VectorXd softmax(const VectorXd& z) {
  const VectorXd e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

struct TrainStats {
  std::vector<double> epoch_loss;  // mean loss over the examples seen in each epoch
};

class PolicyValueNet {
 public:
  PolicyValueNet() : PolicyValueNet(NetConfig{}) {}

  /// Glorot-uniform weights and zero biases.
  explicit PolicyValueNet(const NetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::vector<int> widths{cfg_.input_dim};
    widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    std::mt19937_64 rng(cfg_.seed);
    auto layer = [&](int in, int out) {
      const double a = std::sqrt(6.0 / (in + out));
      std::uniform_real_distribution<double> u(-a, a);
      MatrixXd w(out, in);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
      W_.push_back(w);
      b_.push_back(VectorXd::Zero(out));
    };
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) layer(widths[i], widths[i + 1]);
    layer(widths.back(), cfg_.policy_dim);
    layer(widths.back(), 1);
  }

  const NetConfig& config() const { return cfg_; }
  std::size_t n_hidden() const { return cfg_.hidden.size(); }

  NetOutput forward(const VectorXd& x) const {
    if (x.size() != cfg_.input_dim) throw FormatError("network input has the wrong dimension");
    VectorXd h = x;
    for (std::size_t l = 0; l < n_hidden(); ++l) h = (W_[l] * h + b_[l]).cwiseMax(0.0);
    const std::size_t p = n_hidden();
    return {softmax(W_[p] * h + b_[p]), std::tanh((W_[p + 1] * h + b_[p + 1])(0))};
  }

  /// Mean of |p - pi|^2 + (v - t)^2.
  double loss(const std::vector<TrainExample>& ex) const {
    if (ex.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : ex) {
      const NetOutput o = forward(e.features);
      s += (o.policy - e.policy).squaredNorm() + (o.value - e.value) * (o.value - e.value);
    }
    return s / static_cast<double>(ex.size());
  }

  /// Loss gradient over a set of examples, laid out like parameters().
  VectorXd gradient(const std::vector<TrainExample>& ex) const {
    std::vector<const TrainExample*> ptr;
    for (const auto& e : ex) ptr.push_back(&e);
    return batch_gradient(ptr);
  }

  /// Fits the current weights to the examples. The example order is shuffled
  /// every epoch with `shuffle_seed`; Adam moments start from zero.
  TrainStats train(const std::vector<TrainExample>& ex, std::uint64_t shuffle_seed) {
    if (ex.empty()) throw TrainingError("no training examples");
    for (const auto& e : ex)
      if (e.features.size() != cfg_.input_dim || e.policy.size() != cfg_.policy_dim)
        throw FormatError("training example does not match the network shape");

    VectorXd theta = parameters();
    VectorXd m = VectorXd::Zero(theta.size()), v = VectorXd::Zero(theta.size());
    std::mt19937_64 rng(shuffle_seed);
    std::vector<std::size_t> order(ex.size());
    std::iota(order.begin(), order.end(), 0);
    TrainStats stats;
    long t = 0;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
        std::vector<const TrainExample*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&ex[order[i]]);
        double batch_loss = 0.0;
        const VectorXd g = batch_gradient(batch, &batch_loss);
        if (!std::isfinite(batch_loss) || !g.allFinite()) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch << ", step " << t << " (loss " << batch_loss
             << ", |theta| " << theta.norm() << ")";
          throw TrainingError(os.str());
        }
        epoch_loss += batch_loss * static_cast<double>(end - start);
        ++t;
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
        theta.array() -= cfg_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
        set_parameters(theta);
      }
      stats.epoch_loss.push_back(epoch_loss / static_cast<double>(ex.size()));
    }
    return stats;
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) n += W_[l].size() + b_[l].size();
    return n;
  }

  /// All weights then biases, layer by layer, each matrix row-major.
  VectorXd parameters() const {
    VectorXd p(parameter_count());
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      for (Eigen::Index i = 0; i < W_[l].rows(); ++i)
        for (Eigen::Index j = 0; j < W_[l].cols(); ++j) p(k++) = W_[l](i, j);
      p.segment(k, b_[l].size()) = b_[l];
      k += b_[l].size();
    }
    return p;
  }

  void set_parameters(const VectorXd& p) {
    if (p.size() != parameter_count()) throw FormatError("parameter vector has the wrong length");
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      for (Eigen::Index i = 0; i < W_[l].rows(); ++i)
        for (Eigen::Index j = 0; j < W_[l].cols(); ++j) W_[l](i, j) = p(k++);
      b_[l] = p.segment(k, b_[l].size());
      k += b_[l].size();
    }
  }

  const std::vector<MatrixXd>& weights() const { return W_; }
  const std::vector<VectorXd>& biases() const { return b_; }

  // Checkpoint layout, all integers uint64 and reals IEEE-754 binary64, both
  // little-endian:
  //   "KFDOENET" version
  //   input_dim policy_dim seed epochs batch_size n_hidden hidden[n_hidden]
  //   learning_rate beta1 beta2 epsilon
  //   per layer: rows cols W (row-major) b
  static constexpr char kMagic[8] = {'K', 'F', 'D', 'O', 'E', 'N', 'E', 'T'};
  static constexpr std::uint64_t kVersion = 1;

  void save(std::ostream& os) const {
    os.write(kMagic, sizeof kMagic);
    put_u64(os, kVersion);
    put_u64(os, static_cast<std::uint64_t>(cfg_.input_dim));
    put_u64(os, static_cast<std::uint64_t>(cfg_.policy_dim));
    put_u64(os, cfg_.seed);
    put_u64(os, static_cast<std::uint64_t>(cfg_.epochs));
    put_u64(os, static_cast<std::uint64_t>(cfg_.batch_size));
    put_u64(os, cfg_.hidden.size());
    for (int h : cfg_.hidden) put_u64(os, static_cast<std::uint64_t>(h));
    for (double d : {cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.epsilon}) put_f64(os, d);
    for (std::size_t l = 0; l < W_.size(); ++l) {
      put_u64(os, static_cast<std::uint64_t>(W_[l].rows()));
      put_u64(os, static_cast<std::uint64_t>(W_[l].cols()));
      for (Eigen::Index i = 0; i < W_[l].rows(); ++i)
        for (Eigen::Index j = 0; j < W_[l].cols(); ++j) put_f64(os, W_[l](i, j));
      for (Eigen::Index i = 0; i < b_[l].size(); ++i) put_f64(os, b_[l](i));
    }
    if (!os) throw FormatError("failed to write network checkpoint");
  }

  static PolicyValueNet load(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMagic))
      throw FormatError("not a network checkpoint (bad magic)");
    const std::uint64_t version = get_u64(is);
    if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    NetConfig c;
    c.input_dim = get_int(is);
    c.policy_dim = get_int(is);
    c.seed = get_u64(is);
    c.epochs = get_int(is);
    c.batch_size = get_int(is);
    const int nh = get_int(is);
    if (nh > 64) throw FormatError("checkpoint declares too many hidden layers");
    c.hidden.clear();
    for (int i = 0; i < nh; ++i) c.hidden.push_back(get_int(is));
    c.learning_rate = get_f64(is);
    c.beta1 = get_f64(is);
    c.beta2 = get_f64(is);
    c.epsilon = get_f64(is);
    try {
      c.validate();
    } catch (const FormatError& e) {
      throw FormatError(std::string("checkpoint header: ") + e.what());
    }
    PolicyValueNet net(c);
    for (std::size_t l = 0; l < net.W_.size(); ++l) {
      const auto r = get_u64(is), k = get_u64(is);
      if (r != static_cast<std::uint64_t>(net.W_[l].rows()) || k != static_cast<std::uint64_t>(net.W_[l].cols()))
        throw FormatError("checkpoint layer " + std::to_string(l) + " has inconsistent shape");
      for (Eigen::Index i = 0; i < net.W_[l].rows(); ++i)
        for (Eigen::Index j = 0; j < net.W_[l].cols(); ++j) net.W_[l](i, j) = get_f64(is);
      for (Eigen::Index i = 0; i < net.b_[l].size(); ++i) net.b_[l](i) = get_f64(is);
    }
    if (!net.parameters().allFinite()) throw FormatError("checkpoint contains non-finite weights");
    return net;
  }

  /// Loads and checks the input and policy sizes against what the caller needs.
  static PolicyValueNet load(std::istream& is, int input_dim, int policy_dim) {
    PolicyValueNet net = load(is);
    if (net.cfg_.input_dim != input_dim || net.cfg_.policy_dim != policy_dim)
      throw FormatError("checkpoint shape (" + std::to_string(net.cfg_.input_dim) + " -> " +
                        std::to_string(net.cfg_.policy_dim) + ") does not match the game (" +
                        std::to_string(input_dim) + " -> " + std::to_string(policy_dim) + ")");
    return net;
  }

  void save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    save(os);
  }

  static PolicyValueNet load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    return load(is);
  }

 private:
  VectorXd batch_gradient(const std::vector<const TrainExample*>& batch, double* loss_out = nullptr) const {
    const std::size_t L = n_hidden();
    std::vector<MatrixXd> gW(W_.size());
    std::vector<VectorXd> gb(b_.size());
    for (std::size_t l = 0; l < W_.size(); ++l) {
      gW[l] = MatrixXd::Zero(W_[l].rows(), W_[l].cols());
      gb[l] = VectorXd::Zero(b_[l].size());
    }
    double loss = 0.0;
    std::vector<VectorXd> act(L + 1), pre(L);
    for (const TrainExample* e : batch) {
      act[0] = e->features;
      for (std::size_t l = 0; l < L; ++l) {
        pre[l] = W_[l] * act[l] + b_[l];
        act[l + 1] = pre[l].cwiseMax(0.0);
      }
      const VectorXd& h = act[L];
      const VectorXd p = softmax(W_[L] * h + b_[L]);
      const double v = std::tanh((W_[L + 1] * h + b_[L + 1])(0));
      loss += (p - e->policy).squaredNorm() + (v - e->value) * (v - e->value);

      const VectorXd dp = 2.0 * (p - e->policy);
      const VectorXd dz = p.cwiseProduct((dp.array() - p.dot(dp)).matrix());
      const double du = 2.0 * (v - e->value) * (1.0 - v * v);
      gW[L] += dz * h.transpose();
      gb[L] += dz;
      gW[L + 1] += du * h.transpose();
      gb[L + 1](0) += du;
      VectorXd dh = W_[L].transpose() * dz + W_[L + 1].transpose().col(0) * du;
      for (std::size_t l = L; l-- > 0;) {
        const VectorXd dpre = dh.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
        gW[l] += dpre * act[l].transpose();
        gb[l] += dpre;
        if (l > 0) dh = W_[l].transpose() * dpre;
      }
    }
    const double n = static_cast<double>(std::max<std::size_t>(batch.size(), 1));
    if (loss_out) *loss_out = loss / n;
    VectorXd g(parameter_count());
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      for (Eigen::Index i = 0; i < gW[l].rows(); ++i)
        for (Eigen::Index j = 0; j < gW[l].cols(); ++j) g(k++) = gW[l](i, j) / n;
      g.segment(k, gb[l].size()) = gb[l] / n;
      k += gb[l].size();
    }
    return g;
  }

  static void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
  static void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<std::uint64_t>(d)); }
  static std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError("truncated network checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  static double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }
  static int get_int(std::istream& is) {
    const std::uint64_t v = get_u64(is);
    if (v > (1u << 30)) throw FormatError("checkpoint header field out of range");
    return static_cast<int>(v);
  }

  NetConfig cfg_;
  std::vector<MatrixXd> W_;
  std::vector<VectorXd> b_;
};

}  // namespace kfdoe

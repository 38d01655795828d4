#pragma once

// Run configuration: a game, a self-play schedule and a network, read from a
// single JSON document. A document may name a preset and override any field.

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kfdoe/environment.hpp"
#include "kfdoe/errors.hpp"
#include "kfdoe/policynet.hpp"
#include "kfdoe/trainer.hpp"

namespace kfdoe {

using json = nlohmann::json;

struct RunConfig {
  std::string preset;  // empty when built from scratch
  GameSpec game;
  TrainSchedule schedule;
  NetConfig net;
  std::string out = "out";
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"elastic", "vonmises", "hill_b05", "hill_b20", "hill_vm_reduction"};
  return names;
}

namespace detail {

inline GameSpec hill_game(const std::string& name, double nu_perp, double B, double Y0, double H) {
  GameSpec g;
  g.name = name;
  g.game = GameKind::HillFullStrain;
  g.n_steps = 5;
  g.action_count = 12;
  g.d_eps = 0.05;
  g.substeps = 10;
  ModelParams t;
  t.law = ElasticLaw::TransverseIsotropic;
  t.E = 1.5;
  t.nu = 0.3;
  t.nu_perp = nu_perp;
  t.B = B;
  t.Y0 = Y0;
  t.H = H;
  g.truth = t;
  g.filter.base = t;
  g.filter.ids = {ParamId::E, ParamId::Nu, ParamId::NuPerp, ParamId::B, ParamId::Y0, ParamId::H};
  g.filter.noise_var = 1e-9;
  g.filter_kind = FilterKind::Switching;
  g.prior.mean_scale = 0.9;
  // Blind test: combined normal and shear loading, then partial unloading.
  Strain peak = Strain::Zero();
  peak(V22) = 0.15;
  peak(V23) = 0.1;
  g.blind_path = strain_program({peak, 0.5 * peak}, 10);
  g.reward.kind = RewardKind::Mixed;
  g.reward.w_nse = 0.5;
  g.reward.w_kl = 0.5;
  g.reward.kl_scale = {10.0, 40.0};
  g.reward.nse_scale = {0.9, 1.0};
  return g;
}

}  // namespace detail

inline RunConfig make_preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.out = name;
  GameSpec& g = c.game;
  if (name == "elastic") {
    g.name = name;
    g.game = GameKind::ElasticVolDev;
    g.n_steps = 2;
    g.action_count = 2;
    g.d_eps = 0.1;
    g.substeps = 1;
    g.truth.K = 1.0;
    g.truth.G = 0.7;
    g.filter.base = g.truth;
    g.filter.ids = {ParamId::K, ParamId::G};
    g.filter.observation = Observation::VolDev;
    g.filter_kind = FilterKind::Masked;
    g.reward.kl_binary_threshold = 7.5;
    c.net.hidden = {50, 50};
    c.net.epochs = 100;
    c.schedule.iterations = 10;
    c.schedule.episodes = 10;
    c.schedule.n_simulations = 25;
  } else if (name == "vonmises") {
    g.name = name;
    g.game = GameKind::VonMisesPiPlane;
    g.n_steps = 6;
    g.action_count = 4;
    g.d_eps = 0.04;
    g.substeps = 10;
    g.truth.K = 1.0;
    g.truth.G = 0.7;
    g.truth.Y0 = 0.3;
    g.truth.H = 1.0;
    g.filter.base = g.truth;
    g.filter.ids = {ParamId::Y0, ParamId::H};
    g.filter.noise_var = 1e-8;
    g.filter.Z << 0.95, 0.05, 0.05, 0.95;
    g.filter_kind = FilterKind::Switching;
    g.reward.kl_scale = {0.0, 16.0};
    c.net.hidden = {100, 100};
    c.net.epochs = 500;
    c.schedule.iterations = 20;
    c.schedule.episodes = 10;
    c.schedule.n_simulations = 50;
  } else if (name == "hill_b05" || name == "hill_b20" || name == "hill_vm_reduction") {
    if (name == "hill_b05")
      g = detail::hill_game(name, 0.2, 0.5, 0.1, 0.1);
    else if (name == "hill_b20")
      g = detail::hill_game(name, 0.2, 2.0, 0.15, 0.2);
    else
      g = detail::hill_game(name, 0.3, 1.0, 0.1, 0.1);
    c.net.hidden = {100, 100};
    c.net.epochs = 500;
    c.schedule.iterations = name == "hill_vm_reduction" ? 20 : 30;
    c.schedule.episodes = name == "hill_vm_reduction" ? 20 : 10;
    c.schedule.n_simulations = 80;
    c.schedule.c_puct_start = 5.0;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw FormatError("unknown preset '" + name + "' (known: " + known + ")");
  }
  c.schedule.c_puct_end = 1.0;
  return c;
}

// ------------------------------------------------------------ serialization

namespace detail {

inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline const char* law_name(ElasticLaw l) { return l == ElasticLaw::BulkShear ? "bulk_shear" : "transverse_isotropic"; }
inline const char* encode_name(EncodeMode m) { return m == EncodeMode::HistoryOnly ? "history" : "history_belief"; }
inline const char* kl_mode_name(KlMode m) {
  return m == KlMode::MostProbable ? "most_probable" : m == KlMode::Elastic ? "elastic" : "plastic";
}
inline const char* sens_name(SensitivityMethod m) {
  return m == SensitivityMethod::Analytic ? "analytic" : "finite_difference";
}

inline json params_json(const ModelParams& p) {
  return {{"law", law_name(p.law)},
          {"form", p.form == StiffnessForm::Consistent ? "consistent" : "as_printed"},
          {"E", p.E},
          {"nu", p.nu},
          {"nu_perp", p.nu_perp},
          {"K", p.K},
          {"G", p.G},
          {"B", p.B},
          {"Y0", number_or_null(p.Y0)},
          {"H", p.H}};
}

inline json strain_json(const Strain& e) { return std::vector<double>(e.data(), e.data() + 6); }

// Reads a JSON value at `path`, turning type errors into FormatError.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  void fail(const std::string& what) const { throw FormatError("config " + (path_.empty() ? "/" : path_) + ": " + what); }

  bool has(const std::string& k) const { return j_.contains(k); }
  Reader sub(const std::string& k) const { return Reader(j_.at(k), path_ + "/" + k); }
  const json& raw(const std::string& k) const { return j_.at(k); }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items())
      if (!ok.count(k)) throw FormatError("config " + path_ + "/" + k + ": unknown key");
  }

  template <class T>
  void get(const std::string& k, T& out) const {
    if (!has(k)) return;
    try {
      out = j_.at(k).get<T>();
    } catch (const json::exception&) {
      throw FormatError("config " + path_ + "/" + k + ": wrong type (" + j_.at(k).dump() + ")");
    }
  }

  void get_number_or_inf(const std::string& k, double& out) const {
    if (!has(k)) return;
    if (j_.at(k).is_null())
      out = std::numeric_limits<double>::infinity();
    else
      get(k, out);
  }

  template <class F>
  void get_enum(const std::string& k, F&& parse) const {
    if (!has(k)) return;
    std::string s;
    get(k, s);
    try {
      parse(s);
    } catch (const Error& e) {
      throw FormatError("config " + path_ + "/" + k + ": " + e.what());
    }
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
};

inline void read_params(const Reader& r, ModelParams& p) {
  r.allow({"law", "form", "E", "nu", "nu_perp", "K", "G", "B", "Y0", "H"});
  r.get_enum("law", [&](const std::string& s) {
    if (s == "bulk_shear")
      p.law = ElasticLaw::BulkShear;
    else if (s == "transverse_isotropic")
      p.law = ElasticLaw::TransverseIsotropic;
    else
      throw FormatError("unknown law '" + s + "'");
  });
  r.get_enum("form", [&](const std::string& s) {
    if (s == "consistent")
      p.form = StiffnessForm::Consistent;
    else if (s == "as_printed")
      p.form = StiffnessForm::AsPrinted;
    else
      throw FormatError("unknown stiffness form '" + s + "'");
  });
  r.get("E", p.E);
  r.get("nu", p.nu);
  r.get("nu_perp", p.nu_perp);
  r.get("K", p.K);
  r.get("G", p.G);
  r.get("B", p.B);
  r.get_number_or_inf("Y0", p.Y0);
  r.get("H", p.H);
}

inline Strain read_strain(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 6) throw FormatError("config " + path + ": expected 6 strain components");
  Strain e;
  for (int i = 0; i < 6; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw FormatError("config " + path + ": non-numeric component");
    e(i) = j[static_cast<std::size_t>(i)].get<double>();
  }
  return e;
}

}  // namespace detail

inline json to_json(const GameSpec& g) {
  using namespace detail;
  json ids = json::array();
  for (ParamId id : g.filter.ids) ids.push_back(std::string(param_name(id)));
  json blind = json::array();
  for (const auto& e : g.blind_path) blind.push_back(strain_json(e));
  json actions = json::array();
  for (const auto& a : g.strain_actions) actions.push_back({a.voigt, a.sign});
  json reward = {{"kind", to_string(g.reward.kind)},
                 {"w_nse", g.reward.w_nse},
                 {"w_kl", g.reward.w_kl},
                 {"kl_scale", {g.reward.kl_scale.lo, g.reward.kl_scale.hi}},
                 {"nse_scale", {g.reward.nse_scale.lo, g.reward.nse_scale.hi}},
                 {"kl_binary_threshold", g.reward.kl_binary_threshold ? json(*g.reward.kl_binary_threshold) : json()}};
  json filter = {{"calibrate", ids},
                 {"base", params_json(g.filter.base)},
                 {"observation", g.filter.observation == Observation::FullStress ? "full_stress" : "vol_dev"},
                 {"noise_var", g.filter.noise_var},
                 {"use_mask", g.filter.use_mask},
                 {"tol_cauchy", g.filter.tol_cauchy},
                 {"window", g.filter.window},
                 {"min_variance_reduction", g.filter.min_variance_reduction},
                 {"replay_history", g.filter.replay_history},
                 {"Z", {{g.filter.Z(0, 0), g.filter.Z(0, 1)}, {g.filter.Z(1, 0), g.filter.Z(1, 1)}}},
                 {"mode_prob0", {g.filter.mode_prob0(0), g.filter.mode_prob0(1)}},
                 {"hard_assignment", g.filter.hard_assignment},
                 {"plastic_sensitivity", sens_name(g.filter.sensitivity.plastic)},
                 {"fd_rel_step", g.filter.sensitivity.rel_step}};
  return {{"name", g.name},
          {"game", to_string(g.game)},
          {"n_steps", g.n_steps},
          {"action_count", g.action_count},
          {"d_eps", g.d_eps},
          {"substeps", g.substeps},
          {"truth", params_json(g.truth)},
          {"filter", filter},
          {"filter_kind", to_string(g.filter_kind)},
          {"kl_mode", kl_mode_name(g.kl_mode)},
          {"prior", {{"mean_scale", g.prior.mean_scale}, {"rel_std", g.prior.rel_std}, {"yield_scale", g.prior.yield_scale}}},
          {"obs_noise_std", g.obs_noise_std},
          {"reward", reward},
          {"blind_path", blind},
          {"strain_actions", actions},
          {"encode", encode_name(g.encode)}};
}

inline json to_json(const TrainSchedule& s) {
  return {{"iterations", s.iterations},         {"episodes", s.episodes},
          {"c_puct_start", s.c_puct_start},     {"c_puct_end", s.c_puct_end},
          {"n_simulations", s.n_simulations},   {"temperature", s.temperature},
          {"seed", s.seed},                     {"failure_budget", s.failure_budget},
          {"parallel", s.parallel}};
}

inline json to_json(const NetConfig& n) {
  return {{"hidden", n.hidden},       {"seed", n.seed},   {"epochs", n.epochs},
          {"batch_size", n.batch_size}, {"learning_rate", n.learning_rate},
          {"beta1", n.beta1},         {"beta2", n.beta2}, {"epsilon", n.epsilon}};
}

inline json to_json(const RunConfig& c) {
  json j = {{"game", to_json(c.game)}, {"schedule", to_json(c.schedule)}, {"net", to_json(c.net)}, {"out", c.out}};
  if (!c.preset.empty()) j["preset"] = c.preset;
  return j;
}

inline void apply(const detail::Reader& r, GameSpec& g) {
  using detail::Reader;
  r.allow({"name", "game", "n_steps", "action_count", "d_eps", "substeps", "truth", "filter", "filter_kind", "kl_mode",
           "prior", "obs_noise_std", "reward", "blind_path", "strain_actions", "encode"});
  r.get("name", g.name);
  r.get_enum("game", [&](const std::string& s) { g.game = game_kind_from_string(s); });
  r.get("n_steps", g.n_steps);
  r.get("action_count", g.action_count);
  r.get("d_eps", g.d_eps);
  r.get("substeps", g.substeps);
  if (r.has("truth")) detail::read_params(r.sub("truth"), g.truth);
  if (r.has("filter")) {
    const Reader f = r.sub("filter");
    f.allow({"calibrate", "base", "observation", "noise_var", "use_mask", "tol_cauchy", "window",
             "min_variance_reduction", "replay_history", "Z", "mode_prob0", "hard_assignment", "plastic_sensitivity",
             "fd_rel_step"});
    if (f.has("calibrate")) {
      std::vector<std::string> names;
      f.get("calibrate", names);
      g.filter.ids.clear();
      for (const auto& n : names) {
        try {
          g.filter.ids.push_back(param_from_name(n));
        } catch (const Error& e) {
          f.fail(std::string("calibrate: ") + e.what());
        }
      }
    }
    if (f.has("base")) detail::read_params(f.sub("base"), g.filter.base);
    f.get_enum("observation", [&](const std::string& s) {
      if (s == "full_stress")
        g.filter.observation = Observation::FullStress;
      else if (s == "vol_dev")
        g.filter.observation = Observation::VolDev;
      else
        throw FormatError("unknown observation '" + s + "'");
    });
    f.get("noise_var", g.filter.noise_var);
    f.get("use_mask", g.filter.use_mask);
    f.get("tol_cauchy", g.filter.tol_cauchy);
    f.get("window", g.filter.window);
    f.get("min_variance_reduction", g.filter.min_variance_reduction);
    f.get("replay_history", g.filter.replay_history);
    if (f.has("Z")) {
      std::vector<std::vector<double>> z;
      f.get("Z", z);
      if (z.size() != 2 || z[0].size() != 2 || z[1].size() != 2) f.fail("Z must be 2x2");
      g.filter.Z << z[0][0], z[0][1], z[1][0], z[1][1];
    }
    if (f.has("mode_prob0")) {
      std::vector<double> m;
      f.get("mode_prob0", m);
      if (m.size() != 2) f.fail("mode_prob0 must have two entries");
      g.filter.mode_prob0 << m[0], m[1];
    }
    f.get("hard_assignment", g.filter.hard_assignment);
    f.get_enum("plastic_sensitivity", [&](const std::string& s) {
      if (s == "analytic")
        g.filter.sensitivity.plastic = SensitivityMethod::Analytic;
      else if (s == "finite_difference")
        g.filter.sensitivity.plastic = SensitivityMethod::FiniteDifference;
      else
        throw FormatError("unknown sensitivity method '" + s + "'");
    });
    f.get("fd_rel_step", g.filter.sensitivity.rel_step);
  }
  r.get_enum("filter_kind", [&](const std::string& s) { g.filter_kind = filter_kind_from_string(s); });
  r.get_enum("kl_mode", [&](const std::string& s) {
    if (s == "most_probable")
      g.kl_mode = KlMode::MostProbable;
    else if (s == "elastic")
      g.kl_mode = KlMode::Elastic;
    else if (s == "plastic")
      g.kl_mode = KlMode::Plastic;
    else
      throw FormatError("unknown kl_mode '" + s + "'");
  });
  if (r.has("prior")) {
    const Reader p = r.sub("prior");
    p.allow({"mean_scale", "rel_std", "yield_scale"});
    p.get("mean_scale", g.prior.mean_scale);
    p.get("rel_std", g.prior.rel_std);
    p.get("yield_scale", g.prior.yield_scale);
  }
  r.get("obs_noise_std", g.obs_noise_std);
  if (r.has("reward")) {
    const Reader w = r.sub("reward");
    w.allow({"kind", "w_nse", "w_kl", "kl_scale", "nse_scale", "kl_binary_threshold"});
    w.get_enum("kind", [&](const std::string& s) { g.reward.kind = reward_kind_from_string(s); });
    w.get("w_nse", g.reward.w_nse);
    w.get("w_kl", g.reward.w_kl);
    for (auto [key, target] : {std::pair{"kl_scale", &g.reward.kl_scale}, std::pair{"nse_scale", &g.reward.nse_scale}}) {
      if (!w.has(key)) continue;
      std::vector<double> b;
      w.get(key, b);
      if (b.size() != 2) w.fail(std::string(key) + " must be [lo, hi]");
      *target = {b[0], b[1]};
    }
    if (w.has("kl_binary_threshold")) {
      if (w.raw("kl_binary_threshold").is_null()) {
        g.reward.kl_binary_threshold.reset();
      } else {
        double t = 0.0;
        w.get("kl_binary_threshold", t);
        g.reward.kl_binary_threshold = t;
      }
    }
  }
  if (r.has("blind_path")) {
    const json& b = r.raw("blind_path");
    if (!b.is_array()) r.fail("blind_path must be an array of strain increments");
    g.blind_path.clear();
    for (std::size_t i = 0; i < b.size(); ++i)
      g.blind_path.push_back(detail::read_strain(b[i], r.path() + "/blind_path/" + std::to_string(i)));
  }
  if (r.has("strain_actions")) {
    std::vector<std::pair<int, int>> t;
    r.get("strain_actions", t);
    g.strain_actions.clear();
    for (const auto& [v, s] : t) {
      if (v < 0 || v > 5 || (s != 1 && s != -1)) r.fail("strain_actions entries must be [voigt 0-5, sign +-1]");
      g.strain_actions.push_back({v, s});
    }
  }
  r.get_enum("encode", [&](const std::string& s) {
    if (s == "history")
      g.encode = EncodeMode::HistoryOnly;
    else if (s == "history_belief")
      g.encode = EncodeMode::HistoryPlusBelief;
    else
      throw FormatError("unknown encoding '" + s + "'");
  });
}

inline void apply(const detail::Reader& r, TrainSchedule& s) {
  r.allow({"iterations", "episodes", "c_puct_start", "c_puct_end", "n_simulations", "temperature", "seed",
           "failure_budget", "parallel"});
  r.get("iterations", s.iterations);
  r.get("episodes", s.episodes);
  r.get("c_puct_start", s.c_puct_start);
  r.get("c_puct_end", s.c_puct_end);
  r.get("n_simulations", s.n_simulations);
  r.get("temperature", s.temperature);
  r.get("seed", s.seed);
  r.get("failure_budget", s.failure_budget);
  r.get("parallel", s.parallel);
}

inline void apply(const detail::Reader& r, NetConfig& n) {
  r.allow({"hidden", "seed", "epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon"});
  r.get("hidden", n.hidden);
  r.get("seed", n.seed);
  r.get("epochs", n.epochs);
  r.get("batch_size", n.batch_size);
  r.get("learning_rate", n.learning_rate);
  r.get("beta1", n.beta1);
  r.get("beta2", n.beta2);
  r.get("epsilon", n.epsilon);
}

/// Builds a configuration from JSON. A "preset" key seeds every field; the
/// other sections override it. The result is validated.
inline RunConfig config_from_json(const json& j) {
  const detail::Reader r(j, "");
  r.allow({"preset", "game", "schedule", "net", "out"});
  RunConfig c;
  if (r.has("preset")) {
    std::string name;
    r.get("preset", name);
    c = make_preset(name);
  }
  if (r.has("game")) apply(r.sub("game"), c.game);
  if (r.has("schedule")) apply(r.sub("schedule"), c.schedule);
  if (r.has("net")) apply(r.sub("net"), c.net);
  r.get("out", c.out);
  c.game.validate();
  c.schedule.validate();
  if (c.net.hidden.empty()) throw FormatError("config /net/hidden: at least one hidden layer is required");
  for (int h : c.net.hidden)
    if (h < 1) throw FormatError("config /net/hidden: layer widths must be positive");
  if (c.net.epochs < 1 || c.net.batch_size < 1 || !(c.net.learning_rate > 0.0))
    throw FormatError("config /net: epochs, batch_size and learning_rate must be positive");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a of the canonical JSON of everything that affects results; the
/// output directory and the thread count are left out.
inline std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("out");
  j.erase("preset");
  j["schedule"].erase("parallel");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace kfdoe

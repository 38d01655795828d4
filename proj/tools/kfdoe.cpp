// Command-line front end: train, design, calibrate, validate.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kfdoe/config.hpp"
#include "kfdoe/io.hpp"
#include "kfdoe/trainer.hpp"

namespace fs = std::filesystem;
using namespace kfdoe;

namespace {

struct Options {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::optional<int> parallel;
  std::string filter;
  std::string reward;
  std::string input;
  std::string path;
  bool quiet = false;
};

void add_common(CLI::App* app, Options& o) {
  auto* cfg = app->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--preset", o.preset, "built-in configuration")
      ->check(CLI::IsMember(preset_names()))
      ->excludes(cfg);
  app->add_option("--seed", o.seed, "base seed for search, sampling and network initialisation");
  app->add_option("--filter", o.filter, "calibration filter")->check(CLI::IsMember({"masked", "switching"}));
  app->add_option("--reward", o.reward, "episode reward")->check(CLI::IsMember({"kl", "nse", "mixed"}));
}

RunConfig resolve(const Options& o) {
  if (o.config.empty() && o.preset.empty()) throw FormatError("one of --config or --preset is required");
  RunConfig c = o.config.empty() ? make_preset(o.preset) : load_config(o.config);
  if (o.seed) {
    c.schedule.seed = *o.seed;
    c.net.seed = *o.seed;
  }
  if (o.parallel) c.schedule.parallel = *o.parallel;
  if (!o.filter.empty()) c.game.filter_kind = filter_kind_from_string(o.filter);
  if (!o.reward.empty()) c.game.reward.kind = reward_kind_from_string(o.reward);
  if (!o.out.empty()) c.out = o.out;
  c.game.validate();
  c.schedule.validate();
  return c;
}

std::vector<int> parse_path(const std::string& s, const GameSpec& g) {
  std::vector<int> p;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int code = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      p.push_back(code);
    } catch (const std::exception&) {
      throw FormatError("--path: '" + item + "' is not an action code");
    }
  }
  for (int c : p)
    if (c < 1 || c > g.action_count)
      throw FormatError("--path: code " + std::to_string(c) + " outside 1.." + std::to_string(g.action_count));
  if (static_cast<int>(p.size()) != g.n_steps)
    throw FormatError("--path: expected " + std::to_string(g.n_steps) + " codes, got " + std::to_string(p.size()));
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw FormatError("cannot write " + p.string());
  return f;
}

json belief_json(const GameSpec& g, const ParameterBelief& b) {
  json mu, sd;
  for (std::size_t i = 0; i < g.filter.ids.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const std::string n(param_name(g.filter.ids[i]));
    mu[n] = b.mu(k);
    sd[n] = std::sqrt(std::max(0.0, b.Sigma(k, k)));
  }
  return {{"mu", mu}, {"sd", sd}};
}

json result_json(const GameSpec& g, const EpisodeResult& r) {
  json j = belief_json(g, r.belief);
  j["kl"] = r.kl.total;
  j["score"] = r.score;
  if (r.raw_nse) j["nse"] = *r.raw_nse;
  return j;
}

std::string path_string(const std::vector<int>& p) {
  std::string s;
  for (int c : p) s += (s.empty() ? "" : ",") + std::to_string(c);
  return s;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve(o);
  const std::string hash = config_hash(c);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  const fs::path ckpt = o.checkpoint.empty() ? dir / "net.kfdoe" : fs::path(o.checkpoint);
  open_out(dir / "config.json") << to_json(c).dump(2) << '\n';

  std::ofstream log = open_out(dir / "episodes.jsonl");
  TrainingHooks hooks;
  hooks.on_episode = [&](int it, int ep, const EpisodeOutcome& out) {
    write_episode_jsonl(log, it, ep, c.game, out.result, out.records, hash);
  };
  const auto t0 = std::chrono::steady_clock::now();
  hooks.on_iteration = [&](const IterationReport& r, const PolicyValueNet& net) {
    net.save_file(ckpt.string());
    if (o.quiet) return;
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "iteration " << r.iteration << "  c_puct " << std::setprecision(3) << r.c_puct << "  mean "
              << r.mean << "  std " << r.stddev << "  failed " << r.failed << "  greedy [" << path_string(r.greedy)
              << "]  " << std::fixed << std::setprecision(1) << dt << "s" << std::defaultfloat << '\n';
  };
  const TrainingResult res = run_training(c.schedule, c.game, c.net, hooks);
  log.close();

  {
    std::ofstream f = open_out(dir / "scores.csv");
    write_scores_csv(f, res.reports);
  }
  const std::vector<int> design = res.reports.back().greedy;
  {
    std::ofstream f = open_out(dir / "design.csv");
    write_strain_program_csv(f, c.game, design);
  }

  json summary = {{"config_hash", hash},
                  {"design", design},
                  {"design_probability", path_probability(res.net, c.game, design)},
                  {"checkpoint", ckpt.string()}};
  json iters = json::array();
  for (const auto& r : res.reports)
    iters.push_back({{"iteration", r.iteration}, {"c_puct", r.c_puct}, {"mean", r.mean}, {"std", r.stddev},
                     {"failed", r.failed}, {"greedy", r.greedy}, {"loss_before", r.loss_before},
                     {"loss_after", r.loss_after}});
  summary["iterations"] = iters;

  int status = 0;
  try {
    const CalibrationReport cal = calibrate_path(design, c.game);
    summary["calibration"] = result_json(c.game, cal.result);
    std::vector<Strain> total;
    for (const auto& r : cal.records) total.push_back(r.strain);
    std::ofstream rec = open_out(dir / "record.csv");
    write_record_csv(rec, specimen_record(c.game.truth, total));
    std::ofstream bel = open_out(dir / "belief.csv");
    write_belief_csv(bel, c.game, cal.records);
  } catch (const Error& e) {
    summary["calibration_error"] = e.what();
    std::cerr << "error: calibrating the design failed: " << e.what() << '\n';
    status = 1;
  }
  open_out(dir / "summary.json") << summary.dump(2) << '\n';
  std::cout << "design [" << path_string(design) << "]  config " << hash << "  artifacts in " << dir.string() << '\n';
  return status;
}

int cmd_design(const Options& o) {
  const RunConfig c = resolve(o);
  std::ifstream in(o.checkpoint, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + o.checkpoint);
  const PolicyValueNet net = PolicyValueNet::load(in, static_cast<int>(Episode::feature_dim(c.game)), c.game.action_count);
  const std::vector<int> design = design_experiment(net, c.game);
  std::cout << json{{"config_hash", config_hash(c)},
                    {"design", design},
                    {"probability", path_probability(net, c.game, design)}}
                   .dump()
            << '\n';
  if (!o.out.empty()) {
    std::ofstream f = open_out(o.out);
    write_strain_program_csv(f, c.game, design);
  }
  return 0;
}

int cmd_calibrate(const Options& o) {
  const RunConfig c = resolve(o);
  if (o.input.empty() == o.path.empty()) throw FormatError("give exactly one of a record file or --path");
  const std::optional<FilterKind> filter =
      o.filter.empty() ? std::nullopt : std::optional<FilterKind>(filter_kind_from_string(o.filter));
  CalibrationReport rep;
  if (!o.path.empty()) {
    rep = calibrate_path(parse_path(o.path, c.game), c.game, filter);
  } else {
    const Record r = read_record_file(o.input);
    rep = calibrate_record(c.game, r.strain, r.stress, filter);
  }
  json j = result_json(c.game, rep.result);
  j["config_hash"] = config_hash(c);
  j["steps"] = rep.records.size();
  std::cout << j.dump() << '\n';
  if (!o.out.empty()) {
    std::ofstream f = open_out(o.out);
    write_belief_csv(f, c.game, rep.records);
  }
  return 0;
}

int cmd_validate(const Options& o) {
  const RunConfig c = resolve(o);
  const json resolved = to_json(c);
  if (!o.out.empty())
    open_out(o.out) << resolved.dump(2) << '\n';
  else
    std::cout << resolved.dump(2) << '\n';
  if (!o.checkpoint.empty()) {
    std::ifstream in(o.checkpoint, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + o.checkpoint);
    PolicyValueNet::load(in, static_cast<int>(Episode::feature_dim(c.game)), c.game.action_count);
  }
  if (!o.input.empty()) read_record_file(o.input);
  std::cerr << "ok  config " << config_hash(c) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement-learned experiment design for Kalman-filter material calibration"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "self-play training; writes logs, scores, checkpoint and design");
  add_common(train, o);
  train->add_option("--out", o.out, "output directory");
  train->add_option("--checkpoint", o.checkpoint, "checkpoint file (default <out>/net.kfdoe)");
  train->add_option("--parallel", o.parallel, "worker threads for episodes")->check(CLI::PositiveNumber);
  train->add_flag("--quiet", o.quiet, "no per-iteration progress");

  auto* design = app.add_subcommand("design", "greedy experiment from a trained network");
  add_common(design, o);
  design->add_option("--checkpoint", o.checkpoint, "trained network")->required()->check(CLI::ExistingFile);
  design->add_option("--out", o.out, "strain program CSV");

  auto* calibrate = app.add_subcommand("calibrate", "filter a measured record or replay a path");
  add_common(calibrate, o);
  calibrate->add_option("record", o.input, "CSV: step, 6 strains, 6 stresses")->check(CLI::ExistingFile);
  calibrate->add_option("--path", o.path, "comma-separated action codes instead of a record");
  calibrate->add_option("--out", o.out, "belief trace CSV");

  auto* validate = app.add_subcommand("validate", "check a configuration and optional artifacts");
  add_common(validate, o);
  validate->add_option("--out", o.out, "write the resolved configuration here");
  validate->add_option("--checkpoint", o.checkpoint, "checkpoint to check against the configuration");
  validate->add_option("record", o.input, "record CSV to parse");

  CLI11_PARSE(app, argc, argv);
  try {
    if (train->parsed()) return cmd_train(o);
    if (design->parsed()) return cmd_design(o);
    if (calibrate->parsed()) return cmd_calibrate(o);
    return cmd_validate(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

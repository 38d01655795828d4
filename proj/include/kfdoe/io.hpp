#pragma once

// Artifact formats: score tables, strain programs, measured records, belief
// traces and the JSON-lines episode log.

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "kfdoe/environment.hpp"
#include "kfdoe/errors.hpp"
#include "kfdoe/trainer.hpp"

namespace kfdoe {

inline constexpr const char* kStrainColumns = "eps11,eps22,eps33,eps23,eps13,eps12";
inline constexpr const char* kStressColumns = "sig11,sig22,sig33,sig23,sig13,sig12";

namespace detail {

template <class V>
void write_row(std::ostream& os, const V& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ',' << v(i);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }
  return out;
}

inline double parse_double(const std::string& s, bool& ok) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  ok = ec == std::errc() && p == s.data() + s.size() && !s.empty();
  return v;
}

}  // namespace detail

/// "iteration,episode,score", one row per kept episode.
inline void write_scores_csv(std::ostream& os, const std::vector<IterationReport>& reports) {
  os << "iteration,episode,score\n" << std::setprecision(17);
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.scores.size(); ++i) os << r.iteration << ',' << r.episode_ids[i] << ',' << r.scores[i] << '\n';
}

/// Total strain after every sub-step of a path, starting from the virgin state (step 0).
inline void write_strain_program_csv(std::ostream& os, const GameSpec& g, const std::vector<int>& path) {
  os << "step," << kStrainColumns << '\n' << std::setprecision(17);
  Strain e = Strain::Zero();
  int step = 0;
  os << step;
  detail::write_row(os, e);
  os << '\n';
  for (int c : path) {
    const Strain inc = action_to_strain(c, g) / g.substeps;
    for (int s = 0; s < g.substeps; ++s) {
      e += inc;
      os << ++step;
      detail::write_row(os, e);
      os << '\n';
    }
  }
}

struct Record {
  std::vector<Strain> strain;  // total strain per row
  std::vector<Stress> stress;
};

/// Noise-free specimen response along a sequence of total strains.
inline Record specimen_record(const ModelParams& truth, const std::vector<Strain>& total) {
  Record r;
  MaterialState st;
  Strain prev = Strain::Zero();
  for (const auto& e : total) {
    st = integrate_step(st, e - prev, truth).state;
    prev = e;
    r.strain.push_back(e);
    r.stress.push_back(st.sigma);
  }
  return r;
}

inline void write_record_csv(std::ostream& os, const Record& r) {
  os << "step," << kStrainColumns << ',' << kStressColumns << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < r.strain.size(); ++k) {
    os << k + 1;
    detail::write_row(os, r.strain[k]);
    detail::write_row(os, r.stress[k]);
    os << '\n';
  }
}

/// Reads "step, 6 strains, 6 stresses" rows. Errors name the 1-based line.
inline Record read_record_csv(std::istream& is) {
  Record r;
  std::string line;
  int lineno = 0;
  bool header = false;
  long last_step = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    const auto cells = detail::split_csv(line);
    auto fail = [&](const std::string& what) {
      throw FormatError("record line " + std::to_string(lineno) + ": " + what);
    };
    if (!header) {
      header = true;
      if (cells.size() != 13 || cells[0] != "step") fail("expected header 'step,<6 strains>,<6 stresses>'");
      continue;
    }
    if (cells.size() != 13) fail("expected 13 columns, found " + std::to_string(cells.size()));
    bool ok = false;
    const double step = detail::parse_double(cells[0], ok);
    if (!ok || step != static_cast<double>(static_cast<long>(step))) fail("step '" + cells[0] + "' is not an integer");
    if (static_cast<long>(step) <= last_step) fail("steps must increase");
    last_step = static_cast<long>(step);
    Strain e;
    Stress s;
    for (int i = 0; i < 12; ++i) {
      const double v = detail::parse_double(cells[static_cast<std::size_t>(i + 1)], ok);
      if (!ok || !std::isfinite(v)) fail("column " + std::to_string(i + 2) + " '" + cells[static_cast<std::size_t>(i + 1)] + "' is not a finite number");
      (i < 6 ? e(i) : s(i - 6)) = v;
    }
    r.strain.push_back(e);
    r.stress.push_back(s);
  }
  if (!header) throw FormatError("record is empty");
  if (r.strain.empty()) throw FormatError("record has a header but no rows");
  return r;
}

inline Record read_record_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open record " + path);
  try {
    return read_record_csv(in);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

/// One row per filter step: belief mean, standard deviations and mode probabilities.
inline void write_belief_csv(std::ostream& os, const GameSpec& g, const std::vector<StepRecord>& records) {
  os << "step";
  for (ParamId id : g.filter.ids) os << ",mu_" << param_name(id);
  for (ParamId id : g.filter.ids) os << ",sd_" << param_name(id);
  os << ",p_elastic,p_plastic\n" << std::setprecision(17);
  int step = 0;
  for (const auto& r : records) {
    os << ++step;
    detail::write_row(os, r.mu);
    detail::write_row(os, r.sigma_diag.cwiseMax(0.0).cwiseSqrt());
    os << ',' << r.mode_prob(0) << ',' << r.mode_prob(1) << '\n';
  }
}

namespace detail {

inline json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace detail

/// JSON-lines log of one episode: a line per filter step.
inline void write_episode_jsonl(std::ostream& os, int iteration, int episode, const GameSpec& g,
                                const EpisodeResult& result, const std::vector<StepRecord>& records,
                                const std::string& config_hash) {
  for (std::size_t k = 0; k < records.size(); ++k) {
    const StepRecord& r = records[k];
    json j = {{"config_hash", config_hash},
              {"iteration", iteration},
              {"episode", episode},
              {"step", k + 1},
              {"decision", r.action_index},
              {"code", r.code},
              {"action", describe_action(r.code, g)},
              {"substep", r.substep},
              {"strain", detail::vec_json(r.strain)},
              {"datum", detail::vec_json(r.datum)},
              {"prediction", detail::vec_json(r.prediction)},
              {"mu", detail::vec_json(r.mu)},
              {"sigma_diag", detail::vec_json(r.sigma_diag)},
              {"mode_prob", {r.mode_prob(0), r.mode_prob(1)}},
              {"true_mode", r.true_mode == StepMode::Elastic ? "elastic" : "plastic"}};
    if (k < result.kl.kl.size()) j["kl"] = result.kl.kl[k];
    if (k + 1 == records.size()) {
      j["score"] = result.score;
      j["kl_total"] = result.kl.total;
      if (result.raw_nse) j["nse"] = *result.raw_nse;
    }
    os << j.dump() << '\n';
  }
}

}  // namespace kfdoe

#pragma once

// Run artifacts: report.json, hf_growth.csv and sweep.csv. Output depends only on the
// config and seed, so repeated runs produce identical files.

#include "gpyield/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>

namespace gpyield {

/// Shortest round-trip decimal form, fixed across runs.
inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  // Prefer the shorter %.15g form when it reads back exactly.
  std::snprintf(buf, sizeof buf, "%.15g", v);
  if (std::strtod(buf, nullptr) == v) s = buf;
  return s;
}

inline json counters_json(const EvalCounters& c, CostModel cost) {
  return {{"offline", c.offline},
          {"online", c.online},
          {"total", c.total()},
          {"batch_size", c.batch_size},
          {"effective", c.effective()},
          {"effective_offline", c.effective_offline()},
          {"effective_online", c.effective_online()},
          {"unit", cost == CostModel::per_frequency ? "frequency-evaluation" : "call"}};
}

inline json to_json(const RunReport& r) {
  json j;
  j["method"] = r.method;
  j["yield"] = r.yield;
  j["accepted"] = r.accepted;
  j["n_mc"] = r.n_mc;
  j["sigma_y_bound"] = r.sigma_bound();
  j["sigma_y_estimate"] = r.sigma_estimate();
  j["cost_model"] = to_string(r.cost_model);
  j["counters"] = counters_json(r.counters, r.cost_model);
  j["reduction_factor"] = r.reduction_factor();

  json batches = json::array();
  for (const auto& b : r.batches) {
    batches.push_back({{"index", b.index},
                       {"considered", b.considered},
                       {"online_hf", b.online_hf},
                       {"critical_per_frequency", b.critical_per_frequency},
                       {"added_per_frequency", b.added_per_frequency},
                       {"final_error_db", b.final_error_db},
                       {"reclassified", b.reclassified}});
  }
  j["batches"] = batches;

  json kernels = json::array();
  for (const auto& [re, im] : r.final_kernels) kernels.push_back({{"real", to_json(re)}, {"imag", to_json(im)}});
  j["final_kernels"] = kernels;

  std::string verdicts;
  verdicts.reserve(r.samples.size());
  std::size_t surrogate_only = 0;
  for (const auto& s : r.samples) {
    verdicts.push_back(s.verdict == Verdict::accepted ? 'A' : 'R');
    surrogate_only += s.surrogate_only() ? 1 : 0;
  }
  j["verdicts"] = verdicts;  // one character per sample, in sample-index order
  j["surrogate_only_samples"] = surrogate_only;
  return j;
}

inline json to_json(const SweepTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"upsilon", r.upsilon},
                    {"yield_mc", r.yield_mc},
                    {"yield_gpr_hybrid", r.yield_gpr_hybrid},
                    {"yield_linearized", r.yield_linearized},
                    {"hf_mc", r.hf_mc},
                    {"hf_gpr_hybrid", r.hf_gpr_hybrid},
                    {"verdicts_match", r.verdicts_match},
                    {"sigma_y_estimate", r.sigma_estimate()}});
  }
  return {{"method", "sweep"}, {"steps", t.steps}, {"rows", rows}};
}

/// considered,total_hf,effective: HF growth as samples are processed.
inline void write_hf_growth_csv(std::ostream& os, const RunReport& r) {
  os << "considered,total_hf,effective\n";
  for (const auto& g : r.hf_growth) {
    os << g.considered << ',' << g.total_hf << ',' << EvalCounters::effective_of(g.total_hf, r.counters.batch_size)
       << '\n';
  }
}

inline void write_sweep_csv(std::ostream& os, const SweepTable& t) {
  os << "upsilon,yield_mc,yield_gprh";
  for (double d : t.steps) os << ",yield_lin@" << format_number(d);
  os << ",hf_mc,hf_gprh,verdicts_match\n";
  for (const auto& r : t.rows) {
    os << format_number(r.upsilon) << ',' << format_number(r.yield_mc) << ',' << format_number(r.yield_gpr_hybrid);
    for (double y : r.yield_linearized) os << ',' << format_number(y);
    os << ',' << r.hf_mc << ',' << r.hf_gpr_hybrid << ',' << (r.verdicts_match ? 1 : 0) << '\n';
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace gpyield

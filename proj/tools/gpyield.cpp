// gpyield: config-driven yield estimation.
//
//   gpyield run <config> [--method M] [--seed S] [--batch-size N] [--gamma G]
//                        [--sigma-y T] [--workers W] [--out DIR]
//   gpyield validate <config>
//
// Exit status: 0 success, 1 runtime failure, 2 configuration error.

#include "gpyield/report.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace gpyield;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

struct Overrides {
  std::optional<std::string> method;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> batch_size;
  std::optional<double> gamma;
  std::optional<double> sigma_y;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
};

json read_document(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot open file"});
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
}

// Flags write into the document before validation, so they get the same diagnostics.
void apply(json& doc, const Overrides& o) {
  if (!doc.is_object()) return;
  json& est = doc["estimator"];
  if (est.is_null()) est = json::object();
  if (!est.is_object()) return;
  if (o.method) est["method"] = *o.method;
  if (o.seed) est["seed"] = *o.seed;
  if (o.batch_size) est["batch_size"] = *o.batch_size;
  if (o.gamma) est["safety_factor"] = *o.gamma;
  if (o.sigma_y) {
    est.erase("n_mc");
    est["sigma_y"] = *o.sigma_y;
  }
  if (o.workers) est["workers"] = *o.workers;
  if (o.out) doc["output"] = {{"dir", fs::absolute(*o.out).string()}};
}

RunConfig load(const fs::path& path, const Overrides& o) {
  json doc = read_document(path);
  apply(doc, o);
  const fs::path dir = path.parent_path();
  return parse_config(doc, dir.empty() ? fs::path(".") : dir);
}

void print_summary(const RunReport& r, double seconds) {
  std::printf("method            %s\n", r.method.c_str());
  std::printf("yield             %.6f  (%zu / %zu accepted)\n", r.yield, r.accepted, r.n_mc);
  std::printf("sigma_Y bound     %.6f  (estimate %.6f)\n", r.sigma_bound(), r.sigma_estimate());
  const char* unit = r.cost_model == CostModel::per_frequency ? "frequency evaluations" : "calls";
  std::printf("HF %-14s offline %zu, online %zu, total %zu\n", unit, r.counters.offline, r.counters.online,
              r.counters.total());
  std::printf("effective (N_B=%zu) offline %zu, online %zu, total %zu\n", r.counters.batch_size,
              r.counters.effective_offline(), r.counters.effective_online(), r.counters.effective());
  std::printf("reduction factor  %.2f vs pure MC without short-circuit\n", r.reduction_factor());
  std::printf("batches           %zu\n", r.batches.size());
  std::printf("runtime           %.2f s\n", seconds);
}

void print_sweep(const SweepTable& t, double seconds) {
  std::printf("%-8s %-10s %-10s", "upsilon", "mc", "gpr-hyb");
  for (double d : t.steps) std::printf(" lin@%-6s", format_number(d).c_str());
  std::printf(" %-8s %s\n", "3sigma", "match");
  for (const auto& r : t.rows) {
    std::printf("%-8.3g %-10.6f %-10.6f", r.upsilon, r.yield_mc, r.yield_gpr_hybrid);
    for (double y : r.yield_linearized) std::printf(" %-10.6f", y);
    std::printf(" %-8.5f %s\n", 3.0 * r.sigma_estimate(), r.verdicts_match ? "yes" : "NO");
  }
  std::printf("runtime %.2f s\n", seconds);
}

int run(const fs::path& config_path, const Overrides& o) {
  const RunConfig cfg = load(config_path, o);
  const fs::path out = cfg.resolve(cfg.output_dir);
  fs::create_directories(out);
  const Problem problem = cfg.problem();
  const auto t0 = std::chrono::steady_clock::now();
  json doc;
  doc["settings"] = to_json(cfg);

  if (cfg.method == Method::sweep) {
    const SweepTable table = upsilon_sweep(problem, cfg.settings, cfg.upsilons, cfg.steps);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    doc["result"] = to_json(table);
    std::ostringstream csv;
    write_sweep_csv(csv, table);
    write_text(out / "sweep.csv", csv.str());
    write_text(out / "report.json", doc.dump(2) + "\n");
    print_sweep(table, secs);
    return 0;
  }

  RunReport report;
  switch (cfg.method) {
    case Method::mc: report = estimate_pure_mc(problem, cfg.settings); break;
    case Method::gpr_hybrid: report = estimate_gpr_hybrid(problem, cfg.settings); break;
    case Method::gpr_hybrid_sorted: report = estimate_sorted(problem, cfg.settings); break;
    case Method::linearized: report = estimate_linearized(problem, cfg.settings, cfg.linearization_step); break;
    case Method::sweep: break;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  doc["result"] = to_json(report);
  std::ostringstream csv;
  write_hf_growth_csv(csv, report);
  write_text(out / "hf_growth.csv", csv.str());
  write_text(out / "report.json", doc.dump(2) + "\n");
  print_summary(report, secs);
  std::printf("artifacts         %s\n", out.string().c_str());
  return 0;
}

int validate(const fs::path& config_path) {
  (void)load(config_path, {});
  std::printf("%s: ok\n", config_path.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GPR-hybrid Monte Carlo yield estimation"};
  app.require_subcommand(1);

  std::string config;
  Overrides o;
  auto* run_cmd = app.add_subcommand("run", "run the configured estimator and write report.json and CSVs");
  run_cmd->add_option("config", config, "run config (JSON)")->required();
  run_cmd->add_option("--method", o.method, "mc | gpr-hybrid | gpr-hybrid-sorted | linearized | sweep");
  run_cmd->add_option("--seed", o.seed, "sample seed");
  run_cmd->add_option("--batch-size", o.batch_size, "N_B");
  run_cmd->add_option("--gamma", o.gamma, "safety factor");
  run_cmd->add_option("--sigma-y", o.sigma_y, "target yield std; sets N_MC = ceil((0.5/T)^2)");
  run_cmd->add_option("--workers", o.workers, "threads for predictions and HF calls (default N_B)");
  run_cmd->add_option("--out", o.out, "output directory");

  std::string validate_config;
  auto* validate_cmd = app.add_subcommand("validate", "check a config without running it");
  validate_cmd->add_option("config", validate_config, "run config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  try {
    if (run_cmd->parsed()) return run(config, o);
    return validate(validate_config);
  } catch (const ConfigError& e) {
    for (const auto& d : e.diagnostics()) std::fprintf(stderr, "config error: %s\n", d.c_str());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
}

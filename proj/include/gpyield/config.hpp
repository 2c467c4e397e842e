#pragma once

// JSON run configuration: parsing with path-named diagnostics, problem assembly and
// the settings echo written into reports.

#include "gpyield/blackbox.hpp"
#include "gpyield/linearization.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace gpyield {

using json = nlohmann::json;

/// Every violated invariant, each prefixed with its config path.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> diagnostics)
      : Error(join(diagnostics)), diagnostics_(std::move(diagnostics)) {}

  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  static std::string join(const std::vector<std::string>& d) {
    std::string out;
    for (const auto& s : d) out += (out.empty() ? "" : "\n") + s;
    return out;
  }
  std::vector<std::string> diagnostics_;
};

enum class Method { mc, gpr_hybrid, gpr_hybrid_sorted, linearized, sweep };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::mc: return "mc";
    case Method::gpr_hybrid: return "gpr-hybrid";
    case Method::gpr_hybrid_sorted: return "gpr-hybrid-sorted";
    case Method::linearized: return "linearized";
    case Method::sweep: return "sweep";
  }
  return "mc";
}

inline std::optional<Method> method_from_string(const std::string& s) {
  for (Method m : {Method::mc, Method::gpr_hybrid, Method::gpr_hybrid_sorted, Method::linearized, Method::sweep}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

inline std::optional<SortingCriterion> sorting_from_string(const std::string& s) {
  for (auto c : {SortingCriterion::none, SortingCriterion::egl, SortingCriterion::hybrid}) {
    if (s == to_string(c)) return c;
  }
  return std::nullopt;
}

struct ClauseConfig {
  double threshold_db = -24.0;
  Direction direction = Direction::at_most;
  /// Either explicit grid indices or a band in GHz (grid points inside it, inclusive).
  std::vector<std::size_t> frequencies;
  std::optional<std::pair<double, double>> band_ghz;
};

struct RunConfig {
  enum class OracleKind { waveguide, blackbox };

  Vector mean;
  Matrix covariance;
  bool diagonal = true;  ///< given as "std" rather than "covariance"
  Vector lower;
  Vector upper;
  double scale = 1.0;

  OracleKind oracle = OracleKind::waveguide;
  WaveguideConfig waveguide;
  CostModel cost_model = CostModel::per_frequency;
  BlackboxEndpoint endpoint;
  std::size_t dimension = WaveguideConfig::kParameterCount;

  double band_lo_ghz = 6.5;
  double band_hi_ghz = 7.5;
  std::size_t points = 11;

  std::vector<ClauseConfig> clauses;

  Method method = Method::gpr_hybrid;
  EstimatorSettings settings;
  std::optional<double> sigma_y;  ///< when set, n_mc follows from the sample-size rule
  bool workers_given = false;
  double linearization_step = 0.5;
  std::vector<double> upsilons{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> steps{0.1, 0.5, 1.0};

  std::string output_dir = "out";
  std::filesystem::path base_dir;  ///< relative paths resolve against this

  FrequencyGrid grid() const {
    return FrequencyGrid::equidistant(ghz_to_rad_s(band_lo_ghz), ghz_to_rad_s(band_hi_ghz), points);
  }

  PerformanceSpec spec() const {
    const FrequencyGrid g = grid();
    std::vector<Clause> out;
    for (const auto& c : clauses) {
      Clause k{c.threshold_db, c.direction, c.frequencies};
      if (c.band_ghz) {
        k.frequencies.clear();
        const double lo = ghz_to_rad_s(c.band_ghz->first);
        const double hi = ghz_to_rad_s(c.band_ghz->second);
        for (std::size_t j = 0; j < g.size(); ++j) {
          // Relative slack so band edges given in GHz catch the grid end points.
          const double tol = 1e-12 * std::abs(g[j]);
          if (g[j] >= lo - tol && g[j] <= hi + tol) k.frequencies.push_back(j);
        }
      }
      out.push_back(std::move(k));
    }
    return {std::move(out), g.size()};
  }

  TruncatedGaussian distribution() const { return {mean, covariance, lower, upper, scale}; }

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::shared_ptr<Oracle> make_oracle() const {
    if (oracle == OracleKind::waveguide) return std::make_shared<WaveguideOracle>(waveguide, grid(), cost_model);
    BlackboxEndpoint ep = endpoint;
    if (!ep.command.empty() && ep.command[0].find('/') != std::string::npos) {
      ep.command[0] = resolve(ep.command[0]).string();
    }
    ep.working_dir = resolve(ep.working_dir.empty() ? "." : ep.working_dir).string();
    return std::make_shared<BlackboxOracle>(ep, grid(), dimension);
  }

  Problem problem() const { return {distribution(), spec(), make_oracle()}; }
};

namespace detail {

class ConfigReader {
 public:
  std::vector<std::string> errors;

  void fail(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

  bool object(const json& j, const std::string& path) {
    if (j.is_object()) return true;
    fail(path, "expected an object");
    return false;
  }

  void known_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items()) {
      if (!allowed.count(k)) fail(join(path, k), "unknown key");
    }
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

  std::optional<double> number(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) return std::nullopt;
    const json& v = j.at(key);
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      fail(join(path, key), "expected a finite number");
      return std::nullopt;
    }
    return v.get<double>();
  }

  std::optional<std::size_t> count(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) return std::nullopt;
    const json& v = j.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      fail(join(path, key), "expected a nonnegative integer");
      return std::nullopt;
    }
    return v.get<std::size_t>();
  }

  std::optional<bool> flag(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) return std::nullopt;
    if (!j.at(key).is_boolean()) {
      fail(join(path, key), "expected true or false");
      return std::nullopt;
    }
    return j.at(key).get<bool>();
  }

  std::optional<std::string> text(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) return std::nullopt;
    if (!j.at(key).is_string()) {
      fail(join(path, key), "expected a string");
      return std::nullopt;
    }
    return j.at(key).get<std::string>();
  }

  std::optional<std::vector<double>> numbers(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) return std::nullopt;
    const json& v = j.at(key);
    if (!v.is_array()) {
      fail(join(path, key), "expected an array of numbers");
      return std::nullopt;
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number() || !std::isfinite(v[i].get<double>())) {
        fail(join(path, key) + "[" + std::to_string(i) + "]", "expected a finite number");
        return std::nullopt;
      }
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::optional<std::pair<double, double>> interval(const json& j, const std::string& key, const std::string& path) {
    auto v = numbers(j, key, path);
    if (!v) return std::nullopt;
    if (v->size() != 2) {
      fail(join(path, key), "expected [lo, hi]");
      return std::nullopt;
    }
    return std::make_pair((*v)[0], (*v)[1]);
  }
};

}  // namespace detail

/// Parses and fully validates a config document; throws ConfigError listing every problem.
inline RunConfig parse_config(const json& doc, const std::filesystem::path& base_dir = ".") {
  detail::ConfigReader r;
  RunConfig cfg;
  cfg.base_dir = base_dir;
  if (!r.object(doc, "<root>")) throw ConfigError(r.errors);
  r.known_keys(doc, "", {"distribution", "oracle", "frequency", "spec", "estimator", "output"});

  // distribution
  std::size_t dim = 0;
  if (!doc.contains("distribution")) {
    r.fail("distribution", "missing");
  } else if (const json& d = doc.at("distribution"); r.object(d, "distribution")) {
    r.known_keys(d, "distribution", {"mean", "std", "covariance", "bounds", "scale"});
    auto mean = r.numbers(d, "mean", "distribution");
    if (!d.contains("mean")) r.fail("distribution.mean", "missing");
    if (mean) {
      dim = mean->size();
      if (dim == 0) r.fail("distribution.mean", "must be nonempty");
      cfg.mean = to_vector(*mean);
    }
    const bool has_std = d.contains("std");
    const bool has_cov = d.contains("covariance");
    if (has_std == has_cov) r.fail("distribution", "give exactly one of std or covariance");
    if (has_std) {
      if (auto sd = r.numbers(d, "std", "distribution")) {
        if (sd->size() != dim) {
          r.fail("distribution.std", "length " + std::to_string(sd->size()) + " differs from mean length " + std::to_string(dim));
        } else {
          bool ok = true;
          for (double s : *sd) ok = ok && s > 0.0;
          if (!ok) r.fail("distribution.std", "entries must be positive");
          Vector v = to_vector(*sd);
          cfg.covariance = v.array().square().matrix().asDiagonal();
        }
      }
    }
    if (has_cov) {
      cfg.diagonal = false;
      const json& c = d.at("covariance");
      bool ok = c.is_array() && c.size() == dim;
      Matrix m(dim, dim);
      for (std::size_t i = 0; ok && i < dim; ++i) {
        ok = c[i].is_array() && c[i].size() == dim;
        for (std::size_t k = 0; ok && k < dim; ++k) {
          ok = c[i][k].is_number() && std::isfinite(c[i][k].get<double>());
          if (ok) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = c[i][k].get<double>();
        }
      }
      if (!ok) {
        r.fail("distribution.covariance", "expected a " + std::to_string(dim) + "x" + std::to_string(dim) + " array of finite numbers");
      } else if (!m.isApprox(m.transpose(), 1e-12)) {
        r.fail("distribution.covariance", "must be symmetric");
      } else if (Eigen::LLT<Matrix>(m).info() != Eigen::Success) {
        r.fail("distribution.covariance", "must be positive definite");
      } else {
        cfg.covariance = m;
      }
    }
    if (!d.contains("bounds")) {
      r.fail("distribution.bounds", "missing");
    } else if (const json& b = d.at("bounds"); r.object(b, "distribution.bounds")) {
      r.known_keys(b, "distribution.bounds", {"lower", "upper"});
      auto lo = r.numbers(b, "lower", "distribution.bounds");
      auto hi = r.numbers(b, "upper", "distribution.bounds");
      if (!b.contains("lower")) r.fail("distribution.bounds.lower", "missing");
      if (!b.contains("upper")) r.fail("distribution.bounds.upper", "missing");
      if (lo && lo->size() != dim) r.fail("distribution.bounds.lower", "length differs from mean length");
      if (hi && hi->size() != dim) r.fail("distribution.bounds.upper", "length differs from mean length");
      if (lo && hi && lo->size() == dim && hi->size() == dim) {
        cfg.lower = to_vector(*lo);
        cfg.upper = to_vector(*hi);
        for (std::size_t i = 0; i < dim; ++i) {
          if (!((*lo)[i] < (*hi)[i])) {
            r.fail("distribution.bounds", "component " + std::to_string(i) + ": lower must be below upper");
          } else if (mean && mean->size() == dim && ((*mean)[i] < (*lo)[i] || (*mean)[i] > (*hi)[i])) {
            r.fail("distribution.bounds", "component " + std::to_string(i) + ": mean lies outside the bounds");
          }
        }
      }
    }
    if (auto s = r.number(d, "scale", "distribution")) {
      if (*s < 0.0 || *s > 1.0) r.fail("distribution.scale", "must lie in [0, 1]");
      cfg.scale = *s;
    }
  }

  // oracle
  if (doc.contains("oracle")) {
    const json& o = doc.at("oracle");
    if (r.object(o, "oracle")) {
      const std::string type = r.text(o, "type", "oracle").value_or("waveguide");
      if (type == "waveguide") {
        r.known_keys(o, "oracle", {"type", "width_mm", "length_mm", "cost_model"});
        if (auto w = r.number(o, "width_mm", "oracle")) cfg.waveguide.width_mm = *w;
        if (auto l = r.number(o, "length_mm", "oracle")) cfg.waveguide.length_mm = *l;
        if (!(cfg.waveguide.width_mm > 0.0)) r.fail("oracle.width_mm", "must be positive");
        if (!(cfg.waveguide.length_mm > 0.0)) r.fail("oracle.length_mm", "must be positive");
        if (auto c = r.text(o, "cost_model", "oracle")) {
          if (*c == "per_frequency") cfg.cost_model = CostModel::per_frequency;
          else if (*c == "per_call") cfg.cost_model = CostModel::per_call;
          else r.fail("oracle.cost_model", "expected per_frequency or per_call");
        }
        if (dim != 0 && dim != WaveguideConfig::kParameterCount) {
          r.fail("distribution.mean", "the waveguide oracle takes 4 parameters, got " + std::to_string(dim));
        }
      } else if (type == "blackbox") {
        cfg.oracle = RunConfig::OracleKind::blackbox;
        cfg.cost_model = CostModel::per_call;
        r.known_keys(o, "oracle", {"type", "command", "working_dir", "timeout_s", "pool_size"});
        if (!o.contains("command") || !o.at("command").is_array() || o.at("command").empty()) {
          r.fail("oracle.command", "expected a nonempty array of strings");
        } else {
          for (const auto& a : o.at("command")) {
            if (!a.is_string()) {
              r.fail("oracle.command", "expected a nonempty array of strings");
              break;
            }
            cfg.endpoint.command.push_back(a.get<std::string>());
          }
        }
        cfg.endpoint.working_dir = r.text(o, "working_dir", "oracle").value_or(".");
        if (auto t = r.number(o, "timeout_s", "oracle")) {
          if (!(*t > 0.0)) r.fail("oracle.timeout_s", "must be positive");
          cfg.endpoint.timeout_s = *t;
        }
        if (auto n = r.count(o, "pool_size", "oracle")) {
          if (*n < 1) r.fail("oracle.pool_size", "must be >= 1");
          cfg.endpoint.pool_size = *n;
        }
        std::error_code ec;
        if (!std::filesystem::is_directory(cfg.resolve(cfg.endpoint.working_dir), ec)) {
          r.fail("oracle.working_dir", "not a directory: " + cfg.resolve(cfg.endpoint.working_dir).string());
        }
        if (!cfg.endpoint.command.empty() && cfg.endpoint.command[0].find('/') != std::string::npos) {
          const auto exe = cfg.resolve(cfg.endpoint.command[0]);
          if (::access(exe.c_str(), X_OK) != 0) r.fail("oracle.command", "not an executable: " + exe.string());
        }
      } else {
        r.fail("oracle.type", "expected waveguide or blackbox");
      }
    }
  }
  cfg.dimension = dim;

  // frequency
  if (doc.contains("frequency")) {
    const json& f = doc.at("frequency");
    if (r.object(f, "frequency")) {
      r.known_keys(f, "frequency", {"band_ghz", "points"});
      if (auto b = r.interval(f, "band_ghz", "frequency")) {
        cfg.band_lo_ghz = b->first;
        cfg.band_hi_ghz = b->second;
      }
      if (auto n = r.count(f, "points", "frequency")) cfg.points = *n;
    }
  }
  if (!(cfg.band_lo_ghz > 0.0 && cfg.band_lo_ghz <= cfg.band_hi_ghz)) {
    r.fail("frequency.band_ghz", "expected 0 < lo <= hi");
  }
  if (cfg.points < 1) r.fail("frequency.points", "must be >= 1");
  if (cfg.oracle == RunConfig::OracleKind::waveguide && cfg.waveguide.width_mm > 0.0 &&
      !(ghz_to_rad_s(cfg.band_lo_ghz) > cfg.waveguide.cutoff_rad_s())) {
    r.fail("frequency.band_ghz", "TE10 is evanescent below " + std::to_string(rad_s_to_ghz(cfg.waveguide.cutoff_rad_s())) +
                                     " GHz for this width");
  }

  // spec
  if (!doc.contains("spec")) {
    r.fail("spec", "missing");
  } else if (!doc.at("spec").is_array() || doc.at("spec").empty()) {
    r.fail("spec", "expected a nonempty array of clauses");
  } else {
    const json& s = doc.at("spec");
    for (std::size_t c = 0; c < s.size(); ++c) {
      const std::string path = "spec[" + std::to_string(c) + "]";
      if (!r.object(s[c], path)) continue;
      r.known_keys(s[c], path, {"threshold_db", "direction", "frequencies", "band_ghz"});
      ClauseConfig clause;
      if (auto t = r.number(s[c], "threshold_db", path)) clause.threshold_db = *t;
      else if (!s[c].contains("threshold_db")) r.fail(path + ".threshold_db", "missing");
      const std::string dir = r.text(s[c], "direction", path).value_or("<=");
      if (dir == "<=") clause.direction = Direction::at_most;
      else if (dir == ">=") clause.direction = Direction::at_least;
      else r.fail(path + ".direction", "expected \"<=\" or \">=\"");
      const bool has_idx = s[c].contains("frequencies");
      const bool has_band = s[c].contains("band_ghz");
      if (has_idx == has_band) r.fail(path, "give exactly one of frequencies or band_ghz");
      if (has_idx) {
        const json& idx = s[c].at("frequencies");
        bool ok = idx.is_array();
        for (std::size_t i = 0; ok && i < idx.size(); ++i) {
          ok = idx[i].is_number_unsigned() || (idx[i].is_number_integer() && idx[i].get<std::int64_t>() >= 0);
          if (ok) clause.frequencies.push_back(idx[i].get<std::size_t>());
        }
        if (!ok) r.fail(path + ".frequencies", "expected an array of grid indices");
      }
      if (has_band) {
        clause.band_ghz = r.interval(s[c], "band_ghz", path);
        if (clause.band_ghz && !(clause.band_ghz->first <= clause.band_ghz->second)) {
          r.fail(path + ".band_ghz", "expected lo <= hi");
        }
      }
      cfg.clauses.push_back(std::move(clause));
    }
  }

  // estimator
  EstimatorSettings& st = cfg.settings;
  if (doc.contains("estimator")) {
    const json& e = doc.at("estimator");
    if (r.object(e, "estimator")) {
      r.known_keys(e, "estimator",
                   {"method", "n_mc", "sigma_y", "batch_size", "tolerance", "sorting", "reevaluate_noncritical",
                    "initial_training", "seed", "safety_factor", "short_circuit", "kernel", "optimize_hyperparameters",
                    "restarts", "retune_each_batch", "standardize_inputs", "workers", "linearization_step", "sweep"});
      if (auto m = r.text(e, "method", "estimator")) {
        if (auto mm = method_from_string(*m)) cfg.method = *mm;
        else r.fail("estimator.method", "expected one of mc, gpr-hybrid, gpr-hybrid-sorted, linearized, sweep");
      }
      if (e.contains("n_mc") && e.contains("sigma_y")) r.fail("estimator", "give at most one of n_mc and sigma_y");
      if (auto n = r.count(e, "n_mc", "estimator")) {
        if (*n < 1) r.fail("estimator.n_mc", "must be >= 1");
        st.n_mc = *n;
      }
      if (auto t = r.number(e, "sigma_y", "estimator")) {
        if (!(*t > 0.0 && *t <= 0.5)) r.fail("estimator.sigma_y", "must lie in (0, 0.5]");
        else cfg.sigma_y = *t;
      }
      if (auto n = r.count(e, "batch_size", "estimator")) {
        if (*n < 1) r.fail("estimator.batch_size", "must be >= 1");
        st.batch_size = *n;
      }
      if (auto t = r.number(e, "tolerance", "estimator")) {
        if (*t < 0.0) r.fail("estimator.tolerance", "must be >= 0");
        st.tolerance = *t;
      }
      if (auto s = r.text(e, "sorting", "estimator")) {
        if (auto c = sorting_from_string(*s)) st.sorting = *c;
        else r.fail("estimator.sorting", "expected none, egl or hybrid");
      }
      if (auto b = r.flag(e, "reevaluate_noncritical", "estimator")) st.reevaluate_noncritical = *b;
      if (auto n = r.count(e, "initial_training", "estimator")) {
        if (*n < 1) r.fail("estimator.initial_training", "must be >= 1");
        st.initial_training = *n;
      }
      if (auto n = r.count(e, "seed", "estimator")) st.seed = *n;
      if (auto g = r.number(e, "safety_factor", "estimator")) {
        if (!(*g > 0.0)) r.fail("estimator.safety_factor", "must be > 0");
        st.hybrid.safety_factor = *g;
      }
      if (auto b = r.flag(e, "short_circuit", "estimator")) st.hybrid.short_circuit = *b;
      if (auto b = r.flag(e, "optimize_hyperparameters", "estimator")) st.optimize_hyperparameters = *b;
      if (auto n = r.count(e, "restarts", "estimator")) {
        if (*n < 1) r.fail("estimator.restarts", "must be >= 1");
        st.hyperparameter_restarts = *n;
      }
      if (auto b = r.flag(e, "retune_each_batch", "estimator")) st.retune_each_batch = *b;
      if (auto b = r.flag(e, "standardize_inputs", "estimator")) st.standardize_inputs = *b;
      if (auto n = r.count(e, "workers", "estimator")) {
        if (*n < 1) r.fail("estimator.workers", "must be >= 1");
        st.workers = *n;
        cfg.workers_given = true;
      }
      if (auto d = r.number(e, "linearization_step", "estimator")) {
        if (!(*d > 0.0)) r.fail("estimator.linearization_step", "must be > 0");
        cfg.linearization_step = *d;
      }
      if (e.contains("kernel") && r.object(e.at("kernel"), "estimator.kernel")) {
        const json& k = e.at("kernel");
        const std::string kp = "estimator.kernel";
        r.known_keys(k, kp, {"signal", "length_scale", "noise", "signal_bounds", "length_bounds"});
        KernelParams& kern = st.kernel;
        if (auto v = r.number(k, "signal", kp)) kern.signal = *v;
        if (auto v = r.number(k, "length_scale", kp)) kern.length_scale = *v;
        if (auto v = r.number(k, "noise", kp)) kern.noise = *v;
        if (auto v = r.interval(k, "signal_bounds", kp)) kern.signal_bounds = {v->first, v->second};
        if (auto v = r.interval(k, "length_bounds", kp)) kern.length_bounds = {v->first, v->second};
        try {
          kern.validate();
        } catch (const Error& ex) {
          r.fail(kp, ex.what());
        }
      }
      if (e.contains("sweep") && r.object(e.at("sweep"), "estimator.sweep")) {
        const json& s = e.at("sweep");
        r.known_keys(s, "estimator.sweep", {"upsilons", "steps"});
        if (auto u = r.numbers(s, "upsilons", "estimator.sweep")) {
          cfg.upsilons = *u;
          for (double v : *u) {
            if (v < 0.0 || v > 1.0) {
              r.fail("estimator.sweep.upsilons", "entries must lie in [0, 1]");
              break;
            }
          }
        }
        if (auto d = r.numbers(s, "steps", "estimator.sweep")) {
          cfg.steps = *d;
          for (double v : *d) {
            if (!(v > 0.0)) {
              r.fail("estimator.sweep.steps", "entries must be > 0");
              break;
            }
          }
        }
      }
    }
  }
  if (cfg.method == Method::gpr_hybrid_sorted && st.sorting == SortingCriterion::none) {
    r.fail("estimator.sorting", "gpr-hybrid-sorted needs egl or hybrid");
  }
  if (cfg.sigma_y) st.n_mc = mc_sample_size(*cfg.sigma_y);
  if (!cfg.workers_given) st.workers = st.batch_size;

  // output
  if (doc.contains("output")) {
    const json& o = doc.at("output");
    if (r.object(o, "output")) {
      r.known_keys(o, "output", {"dir"});
      if (auto d = r.text(o, "dir", "output")) {
        if (d->empty()) r.fail("output.dir", "must be nonempty");
        cfg.output_dir = *d;
      }
    }
  }
  std::error_code ec;
  const auto out_path = cfg.resolve(cfg.output_dir);
  if (std::filesystem::exists(out_path, ec) && !std::filesystem::is_directory(out_path, ec)) {
    r.fail("output.dir", "exists and is not a directory: " + out_path.string());
  }

  // Cross-block checks that need a consistent grid and dimension.
  if (r.errors.empty()) {
    try {
      (void)cfg.spec();
    } catch (const Error& ex) {
      r.fail("spec", ex.what());
    }
    try {
      (void)cfg.distribution();
    } catch (const Error& ex) {
      r.fail("distribution", ex.what());
    }
  }
  if (!r.errors.empty()) throw ConfigError(r.errors);
  return cfg;
}

/// Reads and parses a config file; relative paths inside it resolve against its directory.
inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot open file"});
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& ex) {
    throw ConfigError({path.string() + ": " + ex.what()});
  }
  auto dir = path.parent_path();
  return parse_config(doc, dir.empty() ? std::filesystem::path(".") : dir);
}

/// Settings echo: a complete document that parses back into an equivalent RunConfig.
inline json to_json(const RunConfig& c) {
  json dist;
  dist["mean"] = to_std(c.mean);
  if (c.diagonal) {
    dist["std"] = to_std(c.covariance.diagonal().array().sqrt().matrix());
  } else {
    json rows = json::array();
    for (Eigen::Index i = 0; i < c.covariance.rows(); ++i) rows.push_back(to_std(c.covariance.row(i).transpose()));
    dist["covariance"] = rows;
  }
  dist["bounds"] = {{"lower", to_std(c.lower)}, {"upper", to_std(c.upper)}};
  dist["scale"] = c.scale;

  json oracle;
  if (c.oracle == RunConfig::OracleKind::waveguide) {
    oracle = {{"type", "waveguide"}, {"width_mm", c.waveguide.width_mm}, {"length_mm", c.waveguide.length_mm},
              {"cost_model", to_string(c.cost_model)}};
  } else {
    oracle = {{"type", "blackbox"}, {"command", c.endpoint.command}, {"working_dir", c.endpoint.working_dir},
              {"timeout_s", c.endpoint.timeout_s}, {"pool_size", c.endpoint.pool_size}};
  }

  json spec = json::array();
  for (const auto& k : c.clauses) {
    json j{{"threshold_db", k.threshold_db}, {"direction", to_string(k.direction)}};
    if (k.band_ghz) j["band_ghz"] = {k.band_ghz->first, k.band_ghz->second};
    else j["frequencies"] = k.frequencies;
    spec.push_back(j);
  }

  const EstimatorSettings& s = c.settings;
  json est;
  est["method"] = to_string(c.method);
  est["n_mc"] = s.n_mc;  // resolved value, also when it came from sigma_y
  est["batch_size"] = s.batch_size;
  est["tolerance"] = s.tolerance;
  est["sorting"] = to_string(s.sorting);
  est["reevaluate_noncritical"] = s.reevaluate_noncritical;
  est["initial_training"] = s.initial_training;
  est["seed"] = s.seed;
  est["safety_factor"] = s.hybrid.safety_factor;
  est["short_circuit"] = s.hybrid.short_circuit;
  est["kernel"] = to_json(s.kernel);
  est["optimize_hyperparameters"] = s.optimize_hyperparameters;
  est["restarts"] = s.hyperparameter_restarts;
  est["retune_each_batch"] = s.retune_each_batch;
  est["standardize_inputs"] = s.standardize_inputs;
  est["workers"] = s.workers;
  est["linearization_step"] = c.linearization_step;
  est["sweep"] = {{"upsilons", c.upsilons}, {"steps", c.steps}};

  json doc;
  doc["distribution"] = dist;
  doc["oracle"] = oracle;
  doc["frequency"] = {{"band_ghz", {c.band_lo_ghz, c.band_hi_ghz}}, {"points", c.points}};
  doc["spec"] = spec;
  doc["estimator"] = est;
  doc["output"] = {{"dir", c.output_dir}};
  return doc;
}

}  // namespace gpyield

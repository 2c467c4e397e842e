#pragma once

// Three-way classification of a sample point against performance specifications using
// GPR predictions with a safety buffer, escalating undecided frequencies to the
// high-fidelity model. Also the EGL and hybrid sorting criteria.

#include "gpyield/gpr.hpp"
#include "gpyield/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace gpyield {

enum class Direction {
  at_most,   ///< |S| <= c
  at_least,  ///< |S| >= c
};

inline const char* to_string(Direction d) { return d == Direction::at_most ? "<=" : ">="; }

struct Clause {
  double threshold_db = -24.0;
  Direction direction = Direction::at_most;
  std::vector<std::size_t> frequencies;  ///< grid indices the clause applies to

  bool satisfied_by(double value_db) const {
    return direction == Direction::at_most ? value_db <= threshold_db : value_db >= threshold_db;
  }
};

/// Performance feature specifications: every grid frequency is governed by exactly one clause.
class PerformanceSpec {
 public:
  PerformanceSpec() = default;

  PerformanceSpec(std::vector<Clause> clauses, std::size_t frequency_count)
      : clauses_(std::move(clauses)), clause_of_(frequency_count, kNone) {
    if (clauses_.empty()) throw InvalidArgument("PerformanceSpec: at least one clause is required");
    for (std::size_t c = 0; c < clauses_.size(); ++c) {
      if (!std::isfinite(clauses_[c].threshold_db)) {
        throw InvalidArgument("PerformanceSpec: clause " + std::to_string(c) + " has a non-finite threshold");
      }
      for (std::size_t j : clauses_[c].frequencies) {
        if (j >= frequency_count) {
          throw InvalidArgument("PerformanceSpec: clause " + std::to_string(c) + " references frequency index " +
                                std::to_string(j) + " outside the grid");
        }
        if (clause_of_[j] != kNone) {
          throw InvalidArgument("PerformanceSpec: frequency index " + std::to_string(j) +
                                " is covered by more than one clause");
        }
        clause_of_[j] = c;
      }
    }
    for (std::size_t j = 0; j < frequency_count; ++j) {
      if (clause_of_[j] == kNone) {
        throw InvalidArgument("PerformanceSpec: frequency index " + std::to_string(j) + " is not covered by any clause");
      }
    }
  }

  /// |S| <= threshold at every grid frequency.
  static PerformanceSpec upper_bound(double threshold_db, std::size_t frequency_count) {
    Clause c{threshold_db, Direction::at_most, {}};
    for (std::size_t j = 0; j < frequency_count; ++j) c.frequencies.push_back(j);
    return {{c}, frequency_count};
  }

  std::size_t frequency_count() const { return clause_of_.size(); }
  const std::vector<Clause>& clauses() const { return clauses_; }
  const Clause& clause_for(std::size_t j) const { return clauses_.at(clause_of_.at(j)); }

  bool satisfied_at(std::size_t j, Complex s) const { return clause_for(j).satisfied_by(to_db(s)); }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<Clause> clauses_;
  std::vector<std::size_t> clause_of_;
};

struct HybridSettings {
  double safety_factor = 2.0;
  /// Stop testing a point at the first frequency that rejects it.
  bool short_circuit = true;
};

/// Surrogates for one frequency: independent GPRs for the real and imaginary part.
struct ChannelModels {
  GprModel real;
  GprModel imag;
};

struct FrequencyPrediction {
  Prediction real;
  Prediction imag;

  Complex mean() const { return {real.mean, imag.mean}; }
  /// Combined linear-magnitude standard deviation sqrt(std_re^2 + std_im^2).
  double magnitude_std() const { return std::hypot(real.std, imag.std); }
};

inline FrequencyPrediction predict_frequency(const ChannelModels& m, const Vector& p) {
  return {m.real.predict(p), m.imag.predict(p)};
}

/// Decision band in dB: [dB(max(|m| - g s, floor)), dB(|m| + g s)] around dB(|m|).
struct Band {
  double mean_db = 0.0;
  double lower_db = 0.0;
  double upper_db = 0.0;
};

inline constexpr double kMagnitudeFloor = 1e-30;

inline Band band_from_linear(double magnitude, double spread) {
  return {to_db(std::max(magnitude, kMagnitudeFloor)), to_db(std::max(magnitude - spread, kMagnitudeFloor)),
          to_db(std::max(magnitude + spread, kMagnitudeFloor))};
}

inline Band band_of(const FrequencyPrediction& fp, double safety_factor) {
  return band_from_linear(std::abs(fp.mean()), safety_factor * fp.magnitude_std());
}

enum class BandDecision { pass, fail, critical };

/// Whole band satisfies the clause -> pass; whole band violates it -> fail; otherwise critical.
inline BandDecision decide(const Band& band, const Clause& clause) {
  if (clause.direction == Direction::at_most) {
    if (band.upper_db <= clause.threshold_db) return BandDecision::pass;
    if (band.lower_db > clause.threshold_db) return BandDecision::fail;
  } else {
    if (band.lower_db >= clause.threshold_db) return BandDecision::pass;
    if (band.upper_db < clause.threshold_db) return BandDecision::fail;
  }
  return BandDecision::critical;
}

enum class Verdict { accepted, rejected };

inline const char* to_string(Verdict v) { return v == Verdict::accepted ? "accepted" : "rejected"; }

/// Per-frequency record of how a decision was reached.
struct FrequencyTrace {
  std::size_t frequency = 0;
  Band band;
  bool escalated = false;
  bool passed = false;
};

struct ClassificationOutcome {
  Verdict verdict = Verdict::accepted;
  std::vector<std::size_t> critical_frequencies;
  std::vector<Complex> hf_values;  ///< parallel to critical_frequencies
  std::optional<std::size_t> stop_frequency;
  std::vector<FrequencyTrace> trace;

  bool escalated() const { return !critical_frequencies.empty(); }
};

/// Supplies the high-fidelity S-parameter at grid frequency j for the point being classified.
using HighFidelityLookup = std::function<Complex(std::size_t)>;
/// Supplies the surrogate prediction at grid frequency j for the point being classified.
using PredictionLookup = std::function<FrequencyPrediction(std::size_t)>;

/// Hybrid decision for one point. Frequencies are visited in grid order; a rejection
/// stops the scan when short-circuiting is on (the verdict is unaffected either way).
inline ClassificationOutcome classify(const PredictionLookup& predict, const PerformanceSpec& spec,
                                      const HybridSettings& settings, const HighFidelityLookup& high_fidelity) {
  if (!(settings.safety_factor > 0.0)) throw InvalidArgument("classify: safety factor must be positive");
  ClassificationOutcome out;
  for (std::size_t j = 0; j < spec.frequency_count(); ++j) {
    const Clause& clause = spec.clause_for(j);
    FrequencyTrace t;
    t.frequency = j;
    t.band = band_of(predict(j), settings.safety_factor);
    switch (decide(t.band, clause)) {
      case BandDecision::pass:
        t.passed = true;
        break;
      case BandDecision::fail:
        t.passed = false;
        break;
      case BandDecision::critical: {
        const Complex s = high_fidelity(j);
        out.critical_frequencies.push_back(j);
        out.hf_values.push_back(s);
        t.escalated = true;
        t.passed = clause.satisfied_by(to_db(s));
        break;
      }
    }
    out.trace.push_back(t);
    if (!t.passed && out.verdict == Verdict::accepted) {
      out.verdict = Verdict::rejected;
      out.stop_frequency = j;
      if (settings.short_circuit) break;
    }
  }
  return out;
}

inline ClassificationOutcome classify(const Vector& p, const std::vector<ChannelModels>& models,
                                      const PerformanceSpec& spec, const HybridSettings& settings,
                                      const HighFidelityLookup& high_fidelity) {
  if (models.size() != spec.frequency_count()) {
    throw DimensionError("classify: one surrogate pair per grid frequency is required");
  }
  return classify([&](std::size_t j) { return predict_frequency(models[j], p); }, spec, settings, high_fidelity);
}

/// min_j |S_dB - c| / sigma_dB; sigma_dB is the half-width in dB of the one-sigma band.
/// Terms with sigma_dB = 0 are +inf unless S_dB = c exactly (then 0).
inline double egl_term(double mean_db, double std_db, double threshold_db) {
  const double gap = std::abs(mean_db - threshold_db);
  if (gap == 0.0) return 0.0;
  if (!(std_db > 0.0)) return std::numeric_limits<double>::infinity();
  return gap / std_db;
}

inline double egl_criterion(const std::vector<FrequencyPrediction>& predictions, const PerformanceSpec& spec) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < predictions.size(); ++j) {
    const Band b = band_of(predictions[j], 1.0);
    best = std::min(best, egl_term(b.mean_db, 0.5 * (b.upper_db - b.lower_db), spec.clause_for(j).threshold_db));
  }
  return best;
}

/// (c - lower)(upper - c) for a dB band; positive exactly when the band straddles c.
inline double hybrid_term(double lower_db, double upper_db, double threshold_db) {
  return (threshold_db - lower_db) * (upper_db - threshold_db);
}

inline double hybrid_criterion(const std::vector<FrequencyPrediction>& predictions, const PerformanceSpec& spec,
                               const HybridSettings& settings) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < predictions.size(); ++j) {
    const Band b = band_of(predictions[j], settings.safety_factor);
    best = std::max(best, hybrid_term(b.lower_db, b.upper_db, spec.clause_for(j).threshold_db));
  }
  return best;
}

inline std::vector<FrequencyPrediction> predict_all(const std::vector<ChannelModels>& models, const Vector& p) {
  std::vector<FrequencyPrediction> out;
  out.reserve(models.size());
  for (const auto& m : models) out.push_back(predict_frequency(m, p));
  return out;
}

inline double egl_criterion(const Vector& p, const std::vector<ChannelModels>& models, const PerformanceSpec& spec) {
  return egl_criterion(predict_all(models, p), spec);
}

inline double hybrid_criterion(const Vector& p, const std::vector<ChannelModels>& models, const PerformanceSpec& spec,
                               const HybridSettings& settings) {
  return hybrid_criterion(predict_all(models, p), spec, settings);
}

}  // namespace gpyield

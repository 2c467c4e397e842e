#pragma once

// Monte Carlo yield estimation: pure high-fidelity reference, batched GPR-hybrid
// estimation with greedy online model updates, and the sorted-sampling variant.

#include "gpyield/distributions.hpp"
#include "gpyield/gpr.hpp"
#include "gpyield/hybrid.hpp"
#include "gpyield/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gpyield {

enum class SortingCriterion { none, egl, hybrid };

inline const char* to_string(SortingCriterion s) {
  switch (s) {
    case SortingCriterion::none: return "none";
    case SortingCriterion::egl: return "egl";
    case SortingCriterion::hybrid: return "hybrid";
  }
  return "none";
}

struct EstimatorSettings {
  std::size_t n_mc = 2500;
  std::size_t batch_size = 50;
  double tolerance = 0.0;
  SortingCriterion sorting = SortingCriterion::none;
  bool reevaluate_noncritical = false;
  std::size_t initial_training = 10;
  std::uint64_t seed = 1;
  HybridSettings hybrid;
  KernelParams kernel;
  bool optimize_hyperparameters = true;
  std::size_t hyperparameter_restarts = 10;
  /// Re-tune hyperparameters of every updated model after each batch.
  bool retune_each_batch = false;
  /// Off freezes the surrogates after the offline phase.
  bool update_models = true;
  /// Surrogates see (p - mean) / sqrt(diag Sigma) instead of raw parameters.
  bool standardize_inputs = true;
  std::size_t workers = 1;

  void validate() const {
    if (n_mc < 1) throw InvalidArgument("EstimatorSettings: n_mc must be >= 1");
    if (batch_size < 1) throw InvalidArgument("EstimatorSettings: batch_size must be >= 1");
    if (!(tolerance >= 0.0)) throw InvalidArgument("EstimatorSettings: tolerance must be >= 0");
    if (!(hybrid.safety_factor > 0.0)) throw InvalidArgument("EstimatorSettings: safety factor must be > 0");
    kernel.validate();
  }
};

struct Problem {
  TruncatedGaussian distribution;
  PerformanceSpec spec;
  std::shared_ptr<Oracle> oracle;

  void validate() const {
    if (!oracle) throw InvalidArgument("Problem: no oracle configured");
    if (oracle->dimension() != distribution.dimension()) {
      throw DimensionError("Problem: oracle expects " + std::to_string(oracle->dimension()) +
                           " parameters, distribution has " + std::to_string(distribution.dimension()));
    }
    if (spec.frequency_count() != oracle->grid().size()) {
      throw DimensionError("Problem: specification covers " + std::to_string(spec.frequency_count()) +
                           " frequencies, oracle grid has " + std::to_string(oracle->grid().size()));
    }
  }
};

struct SampleRecord {
  Verdict verdict = Verdict::accepted;
  /// Position at which the point was considered (sorting permutes this).
  std::size_t order = 0;
  /// Online high-fidelity cost spent on this point.
  std::size_t hf_cost = 0;
  std::optional<std::size_t> stop_frequency;
  std::vector<FrequencyTrace> trace;

  bool surrogate_only() const {
    return std::none_of(trace.begin(), trace.end(), [](const FrequencyTrace& t) { return t.escalated; });
  }
};

struct BatchLog {
  std::size_t index = 0;
  std::size_t considered = 0;  ///< samples considered when the update ran
  std::size_t online_hf = 0;
  std::vector<std::size_t> critical_per_frequency;
  std::vector<std::size_t> added_per_frequency;
  std::vector<double> final_error_db;  ///< max |dB(S~) - dB(S)| over C_j after the greedy loop
  std::size_t reclassified = 0;        ///< verdict changes from re-evaluating surrogate-decided points
};

struct GrowthPoint {
  std::size_t considered = 0;
  std::size_t total_hf = 0;
};

struct RunReport {
  std::string method;
  double yield = 0.0;
  std::size_t accepted = 0;
  std::size_t n_mc = 0;
  std::size_t frequency_count = 0;
  CostModel cost_model = CostModel::per_frequency;
  EvalCounters counters;
  std::vector<SampleRecord> samples;  ///< indexed by sample index
  std::vector<BatchLog> batches;
  std::vector<GrowthPoint> hf_growth;
  std::vector<std::pair<KernelParams, KernelParams>> final_kernels;  ///< (real, imag) per frequency

  /// 0.5 / sqrt(N): worst-case standard deviation of the yield estimator.
  double sigma_bound() const { return 0.5 / std::sqrt(static_cast<double>(n_mc)); }
  /// sqrt(Y (1 - Y) / N) at the estimated yield.
  double sigma_estimate() const { return std::sqrt(yield * (1.0 - yield) / static_cast<double>(n_mc)); }
  /// Cost of pure MC without short-circuit divided by the total cost of this run.
  double reduction_factor() const {
    const double reference = static_cast<double>(n_mc) *
                             (cost_model == CostModel::per_frequency ? static_cast<double>(frequency_count) : 1.0);
    return counters.total() == 0 ? std::numeric_limits<double>::infinity()
                                 : reference / static_cast<double>(counters.total());
  }
  std::vector<Verdict> verdicts() const {
    std::vector<Verdict> v;
    v.reserve(samples.size());
    for (const auto& s : samples) v.push_back(s.verdict);
    return v;
  }
};

/// Smallest N with 0.5 / sqrt(N) <= target_std.
inline std::size_t mc_sample_size(double target_std) {
  if (!(target_std > 0.0 && target_std <= 0.5)) {
    throw InvalidArgument("mc_sample_size: target standard deviation must lie in (0, 0.5]");
  }
  const double ratio = 0.5 / target_std;
  auto n = static_cast<std::size_t>(std::ceil(ratio * ratio * (1.0 - 1e-12)));
  n = std::max<std::size_t>(n, 1);
  while (0.5 / std::sqrt(static_cast<double>(n)) > target_std) ++n;
  while (n > 1 && 0.5 / std::sqrt(static_cast<double>(n - 1)) <= target_std) --n;
  return n;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the offline training draw, decorrelated from the MC sample stream.
inline std::uint64_t training_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x7472'6169'6e69'6e67ULL); }

/// Meters high-fidelity calls. In per-call mode one call serves every frequency of a point.
class HighFidelityMeter {
 public:
  explicit HighFidelityMeter(Oracle& oracle) : oracle_(oracle), mode_(oracle.cost_model()) {}

  CostModel mode() const { return mode_; }

  Complex at(const Vector& p, std::size_t j, std::optional<SParamSample>& cache, std::size_t& counter) {
    if (mode_ == CostModel::per_frequency) {
      const Complex s = oracle_.evaluate_at(p, j);
      ++counter;
      return s;
    }
    if (!cache) {
      cache = oracle_.evaluate_all(p);
      ++counter;
    }
    return (*cache)[j];
  }

  /// Every frequency of p; cost |T_d| per-frequency or 1 per-call.
  SParamSample all(const Vector& p, std::size_t& counter) {
    SParamSample s = oracle_.evaluate_all(p);
    counter += mode_ == CostModel::per_frequency ? s.size() : 1;
    return s;
  }

 private:
  Oracle& oracle_;
  CostModel mode_;
};

inline Matrix rows_of(const std::vector<Vector>& points, const std::vector<std::size_t>& idx) {
  Matrix m(static_cast<Eigen::Index>(idx.size()), points.front().size());
  for (std::size_t r = 0; r < idx.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = points[idx[r]].transpose();
  return m;
}

inline std::vector<Prediction> predict_rows(const GprModel& model, const Matrix& rows, std::size_t workers) {
  std::vector<Prediction> out(static_cast<std::size_t>(rows.rows()));
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(workers, out.size() / 256 + 1));
  parallel_for(chunks, chunks, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      const std::size_t lo = out.size() * c / chunks;
      const std::size_t hi = out.size() * (c + 1) / chunks;
      if (lo == hi) continue;
      auto part = model.predict_many(rows.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)));
      std::copy(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(lo));
    }
  });
  return out;
}

inline void finalize(RunReport& r) {
  r.accepted = static_cast<std::size_t>(std::count_if(r.samples.begin(), r.samples.end(),
                                                      [](const SampleRecord& s) { return s.verdict == Verdict::accepted; }));
  r.yield = static_cast<double>(r.accepted) / static_cast<double>(r.n_mc);
}

}  // namespace detail

/// Reference estimator: every sample on the high-fidelity model, short-circuiting over
/// frequencies in per-frequency mode.
inline RunReport estimate_pure_mc(const Problem& problem, const EstimatorSettings& settings) {
  problem.validate();
  settings.validate();
  Oracle& oracle = *problem.oracle;
  const auto samples = problem.distribution.sample(settings.n_mc, settings.seed);
  const std::size_t nf = oracle.grid().size();

  RunReport report;
  report.method = "mc";
  report.n_mc = settings.n_mc;
  report.frequency_count = nf;
  report.cost_model = oracle.cost_model();
  report.counters.batch_size = settings.batch_size;
  report.samples.resize(settings.n_mc);

  const std::size_t workers = oracle.thread_safe() ? settings.workers : 1;
  parallel_for(settings.n_mc, workers, [&](std::size_t begin, std::size_t end) {
    detail::HighFidelityMeter meter(oracle);
    for (std::size_t i = begin; i < end; ++i) {
      SampleRecord& rec = report.samples[i];
      rec.order = i;
      std::optional<SParamSample> cache;
      for (std::size_t j = 0; j < nf; ++j) {
        const Complex s = meter.at(samples[i], j, cache, rec.hf_cost);
        const double db = to_db(s);
        FrequencyTrace t{j, {db, db, db}, true, problem.spec.satisfied_at(j, s)};
        rec.trace.push_back(t);
        if (!t.passed) {
          rec.verdict = Verdict::rejected;
          rec.stop_frequency = j;
          break;
        }
      }
    }
  });

  report.hf_growth.push_back({0, 0});
  for (std::size_t i = 0; i < settings.n_mc; ++i) {
    report.counters.online += report.samples[i].hf_cost;
    report.hf_growth.push_back({i + 1, report.counters.online});
  }
  detail::finalize(report);
  return report;
}

namespace detail {

/// State machine for batched GPR-hybrid estimation (optionally with sorted sampling).
class HybridRun {
 public:
  HybridRun(const Problem& problem, const EstimatorSettings& settings, SortingCriterion sorting)
      : problem_(problem), settings_(settings), sorting_(sorting), meter_(*problem.oracle) {
    problem_.validate();
    settings_.validate();
    if (settings_.initial_training < 1) throw InvalidArgument("GPR-hybrid: initial training set must be nonempty");
    nf_ = problem_.oracle->grid().size();
  }

  RunReport run() {
    report_.method = sorting_ == SortingCriterion::none ? "gpr-hybrid" : std::string("gpr-hybrid-sorted-") + to_string(sorting_);
    report_.n_mc = settings_.n_mc;
    report_.frequency_count = nf_;
    report_.cost_model = meter_.mode();
    report_.counters.batch_size = settings_.batch_size;

    build_initial_models();
    samples_ = problem_.distribution.sample(settings_.n_mc, settings_.seed);
    features_.reserve(samples_.size());
    for (const auto& p : samples_) features_.push_back(feature(p));
    report_.samples.resize(settings_.n_mc);
    pending_.assign(nf_, {});

    order_.resize(settings_.n_mc);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (sorting_ != SortingCriterion::none) {
      cache_.assign(nf_, std::vector<FrequencyPrediction>(settings_.n_mc));
      refresh_cache(0, std::vector<bool>(nf_, true));
      sort_remaining(0);
    }

    report_.hf_growth.push_back({0, report_.counters.total()});
    std::size_t next_trigger = settings_.batch_size;
    for (std::size_t k = 0; k < order_.size(); ++k) {
      const std::size_t i = order_[k];
      classify_point(i, k);
      considered_.push_back(i);
      report_.hf_growth.push_back({k + 1, report_.counters.total()});

      if (report_.counters.online >= next_trigger) {
        next_trigger = (report_.counters.online / settings_.batch_size + 1) * settings_.batch_size;
        if (!settings_.update_models) continue;
        const std::vector<bool> changed = update_models(k + 1);
        if (settings_.reevaluate_noncritical) reevaluate_considered();
        if (sorting_ != SortingCriterion::none && k + 1 < order_.size()) {
          refresh_cache(k + 1, changed);
          sort_remaining(k + 1);
        }
      }
    }
    for (const auto& m : models_) report_.final_kernels.emplace_back(m.real.kernel(), m.imag.kernel());
    finalize(report_);
    return std::move(report_);
  }

 private:
  void build_initial_models() {
    const auto training = problem_.distribution.sample(settings_.initial_training, training_seed(settings_.seed));
    std::vector<SParamSample> values(training.size());
    std::vector<std::size_t> cost(training.size(), 0);
    const std::size_t workers = problem_.oracle->thread_safe() ? settings_.workers : 1;
    parallel_for(training.size(), workers, [&](std::size_t begin, std::size_t end) {
      for (std::size_t t = begin; t < end; ++t) values[t] = meter_.all(training[t], cost[t]);
    });
    report_.counters.offline = std::accumulate(cost.begin(), cost.end(), std::size_t{0});

    std::vector<Vector> inputs;
    for (const auto& p : training) inputs.push_back(feature(p));
    models_.resize(nf_);
    std::vector<double> re(training.size());
    std::vector<double> im(training.size());
    for (std::size_t j = 0; j < nf_; ++j) {
      for (std::size_t t = 0; t < training.size(); ++t) {
        re[t] = values[t][j].real();
        im[t] = values[t][j].imag();
      }
      models_[j].real = tuned(GprModel::fit(inputs, re, settings_.kernel));
      models_[j].imag = tuned(GprModel::fit(inputs, im, settings_.kernel));
    }
  }

  Vector feature(const Vector& p) const {
    if (!settings_.standardize_inputs) return p;
    const auto& d = problem_.distribution;
    return ((p - d.mean()).array() / d.covariance().diagonal().array().sqrt()).matrix();
  }

  GprModel tuned(GprModel m) const {
    if (!settings_.optimize_hyperparameters || m.size() < 2) return m;
    return optimize_hyperparameters(m, settings_.hyperparameter_restarts, splitmix64(settings_.seed)).model;
  }

  FrequencyPrediction prediction(std::size_t i, std::size_t j) const {
    if (sorting_ != SortingCriterion::none) return cache_[j][i];
    return predict_frequency(models_[j], features_[i]);
  }

  void classify_point(std::size_t i, std::size_t position) {
    SampleRecord& rec = report_.samples[i];
    rec.order = position;
    std::optional<SParamSample> hf_cache;
    std::size_t cost = 0;
    auto outcome = classify([&](std::size_t j) { return prediction(i, j); }, problem_.spec, settings_.hybrid,
                            [&](std::size_t j) { return meter_.at(samples_[i], j, hf_cache, cost); });
    record(i, outcome, cost);
  }

  void record(std::size_t i, const ClassificationOutcome& outcome, std::size_t cost) {
    SampleRecord& rec = report_.samples[i];
    rec.verdict = outcome.verdict;
    rec.stop_frequency = outcome.stop_frequency;
    rec.trace = outcome.trace;
    rec.hf_cost += cost;
    report_.counters.online += cost;
    for (std::size_t c = 0; c < outcome.critical_frequencies.size(); ++c) {
      pending_[outcome.critical_frequencies[c]].push_back({i, outcome.hf_values[c]});
    }
  }

  /// Greedy per-frequency update: insert the critical point with the largest dB error
  /// until the maximum error over C_j is <= tolerance or C_j is exhausted.
  std::vector<bool> update_models(std::size_t considered) {
    BatchLog log;
    log.index = report_.batches.size();
    log.considered = considered;
    log.online_hf = report_.counters.online;
    log.critical_per_frequency.assign(nf_, 0);
    log.added_per_frequency.assign(nf_, 0);
    log.final_error_db.assign(nf_, 0.0);
    std::vector<bool> changed(nf_, false);

    for (std::size_t j = 0; j < nf_; ++j) {
      auto& critical = pending_[j];
      log.critical_per_frequency[j] = critical.size();
      if (critical.empty()) continue;
      std::vector<bool> added(critical.size(), false);
      std::vector<double> error(critical.size());
      auto refresh_errors = [&] {
        double worst = 0.0;
        for (std::size_t c = 0; c < critical.size(); ++c) {
          const Complex predicted = predict_frequency(models_[j], features_[critical[c].first]).mean();
          error[c] = std::abs(to_db(std::max(std::abs(predicted), kMagnitudeFloor)) - to_db(critical[c].second));
          worst = std::max(worst, error[c]);
        }
        return worst;
      };
      double eps = refresh_errors();
      std::size_t inserted = 0;
      while (eps > settings_.tolerance && inserted < critical.size()) {
        std::size_t pick = critical.size();
        for (std::size_t c = 0; c < critical.size(); ++c) {
          if (!added[c] && (pick == critical.size() || error[c] > error[pick])) pick = c;
        }
        const Vector& p = features_[critical[pick].first];
        models_[j].real.add_point(p, critical[pick].second.real());
        models_[j].imag.add_point(p, critical[pick].second.imag());
        added[pick] = true;
        ++inserted;
        eps = refresh_errors();
      }
      log.added_per_frequency[j] = inserted;
      log.final_error_db[j] = eps;
      changed[j] = inserted > 0;
      if (inserted > 0 && settings_.retune_each_batch) {
        models_[j].real = tuned(std::move(models_[j].real));
        models_[j].imag = tuned(std::move(models_[j].imag));
      }
      critical.clear();
    }
    report_.batches.push_back(std::move(log));
    return changed;
  }

  /// Re-runs the hybrid decision on already considered points that never reached the oracle.
  void reevaluate_considered() {
    std::size_t changed = 0;
    for (std::size_t i : considered_) {
      SampleRecord& rec = report_.samples[i];
      if (!rec.surrogate_only()) continue;
      std::optional<SParamSample> hf_cache;
      std::size_t cost = 0;
      auto outcome = classify(features_[i], models_, problem_.spec, settings_.hybrid,
                              [&](std::size_t j) { return meter_.at(samples_[i], j, hf_cache, cost); });
      if (outcome.verdict != rec.verdict) ++changed;
      record(i, outcome, cost);
    }
    report_.batches.back().reclassified = changed;
  }

  void refresh_cache(std::size_t from, const std::vector<bool>& changed) {
    if (from >= order_.size()) return;
    const std::vector<std::size_t> remaining(order_.begin() + static_cast<std::ptrdiff_t>(from), order_.end());
    const Matrix rows = rows_of(features_, remaining);
    for (std::size_t j = 0; j < nf_; ++j) {
      if (!changed[j]) continue;
      const auto re = predict_rows(models_[j].real, rows, settings_.workers);
      const auto im = predict_rows(models_[j].imag, rows, settings_.workers);
      for (std::size_t r = 0; r < remaining.size(); ++r) cache_[j][remaining[r]] = {re[r], im[r]};
    }
  }

  void sort_remaining(std::size_t from) {
    std::vector<std::pair<double, std::size_t>> keyed;
    keyed.reserve(order_.size() - from);
    std::vector<FrequencyPrediction> preds(nf_);
    for (std::size_t k = from; k < order_.size(); ++k) {
      const std::size_t i = order_[k];
      for (std::size_t j = 0; j < nf_; ++j) preds[j] = cache_[j][i];
      // Ascending sort key: EGL ascending, hybrid criterion descending.
      const double key = sorting_ == SortingCriterion::egl ? egl_criterion(preds, problem_.spec)
                                                           : -hybrid_criterion(preds, problem_.spec, settings_.hybrid);
      keyed.emplace_back(key, i);
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t k = from; k < order_.size(); ++k) order_[k] = keyed[k - from].second;
  }

  const Problem& problem_;
  EstimatorSettings settings_;
  SortingCriterion sorting_;
  HighFidelityMeter meter_;
  std::size_t nf_ = 0;
  RunReport report_;
  std::vector<Vector> samples_;
  std::vector<Vector> features_;  ///< surrogate inputs, parallel to samples_
  std::vector<ChannelModels> models_;
  std::vector<std::vector<std::pair<std::size_t, Complex>>> pending_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> considered_;
  std::vector<std::vector<FrequencyPrediction>> cache_;
};

}  // namespace detail

/// Batched GPR-hybrid estimation in natural sample order.
inline RunReport estimate_gpr_hybrid(const Problem& problem, const EstimatorSettings& settings) {
  return detail::HybridRun(problem, settings, SortingCriterion::none).run();
}

/// GPR-hybrid estimation with sorted sampling; settings.sorting selects the criterion.
inline RunReport estimate_sorted(const Problem& problem, const EstimatorSettings& settings) {
  if (settings.sorting == SortingCriterion::none) {
    throw InvalidArgument("estimate_sorted: a sorting criterion (egl or hybrid) is required");
  }
  return detail::HybridRun(problem, settings, settings.sorting).run();
}

}  // namespace gpyield

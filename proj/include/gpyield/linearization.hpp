#pragma once

// Affine surrogate from the anchor plus one axis-shifted node per dimension, Monte
// Carlo on that surrogate alone, and the covariance-scale sweep comparing methods.

#include "gpyield/estimator.hpp"

#include <sstream>
#include <string>
#include <vector>

namespace gpyield {

/// Per frequency: S~(p) = sum_l a_l p_l + a_{d+1}, fitted separately for the real and imaginary part.
class LinearSurrogate {
 public:
  LinearSurrogate(Vector anchor, double step, std::vector<Matrix> coefficients)
      : anchor_(std::move(anchor)), step_(step), coefficients_(std::move(coefficients)) {}

  const Vector& anchor() const { return anchor_; }
  double step() const { return step_; }
  std::size_t frequency_count() const { return coefficients_.size(); }
  /// (d + 1) x 2 matrix: rows a_1..a_d then the constant; columns real, imaginary.
  const Matrix& coefficients(std::size_t j) const { return coefficients_.at(j); }

  Complex evaluate(const Vector& p, std::size_t j) const {
    const Matrix& a = coefficients_.at(j);
    require_dimension(p.size(), a.rows() - 1, "LinearSurrogate::evaluate");
    const auto d = p.size();
    return {p.dot(a.col(0).head(d)) + a(d, 0), p.dot(a.col(1).head(d)) + a(d, 1)};
  }

  /// Construction nodes p0, p0 + step e_1, ..., p0 + step e_d.
  static std::vector<Vector> nodes(const Vector& anchor, double step) {
    std::vector<Vector> out{anchor};
    for (Eigen::Index k = 0; k < anchor.size(); ++k) {
      Vector p = anchor;
      p[k] += step;
      out.push_back(std::move(p));
    }
    return out;
  }

 private:
  Vector anchor_;
  double step_;
  std::vector<Matrix> coefficients_;
};

/// Evaluates the oracle at the d + 1 nodes (one full-grid call each) and solves the
/// interpolation system per frequency and channel. `hf_cost` receives the metered cost.
inline LinearSurrogate build_linear(const Vector& anchor, double step, Oracle& oracle, std::size_t* hf_cost = nullptr) {
  if (!(step > 0.0)) throw InvalidArgument("build_linear: step must be positive");
  require_dimension(anchor.size(), static_cast<Eigen::Index>(oracle.dimension()), "build_linear anchor");
  const auto d = anchor.size();
  const auto nodes = LinearSurrogate::nodes(anchor, step);
  Matrix system(d + 1, d + 1);
  std::vector<SParamSample> values;
  std::size_t cost = 0;
  detail::HighFidelityMeter meter(oracle);
  for (Eigen::Index k = 0; k <= d; ++k) {
    system.row(k).head(d) = nodes[static_cast<std::size_t>(k)].transpose();
    system(k, d) = 1.0;
    values.push_back(meter.all(nodes[static_cast<std::size_t>(k)], cost));
  }
  Eigen::FullPivLU<Matrix> lu(system);
  if (!lu.isInvertible()) throw ConditioningError("build_linear: singular interpolation system");
  const std::size_t nf = oracle.grid().size();
  std::vector<Matrix> coefficients;
  coefficients.reserve(nf);
  Matrix rhs(d + 1, 2);
  for (std::size_t j = 0; j < nf; ++j) {
    for (Eigen::Index k = 0; k <= d; ++k) {
      rhs(k, 0) = values[static_cast<std::size_t>(k)][j].real();
      rhs(k, 1) = values[static_cast<std::size_t>(k)][j].imag();
    }
    coefficients.push_back(lu.solve(rhs));
  }
  if (hf_cost) *hf_cost = cost;
  return {anchor, step, std::move(coefficients)};
}

/// Classifies every MC sample on the linear surrogate only (no escalation).
inline RunReport estimate_linearized(const Problem& problem, const EstimatorSettings& settings,
                                     const LinearSurrogate& surrogate, std::size_t construction_cost) {
  problem.validate();
  settings.validate();
  if (surrogate.frequency_count() != problem.spec.frequency_count()) {
    throw DimensionError("estimate_linearized: surrogate and specification disagree on the frequency count");
  }
  const auto samples = problem.distribution.sample(settings.n_mc, settings.seed);
  RunReport report;
  report.method = "linearized";
  report.n_mc = settings.n_mc;
  report.frequency_count = surrogate.frequency_count();
  report.cost_model = problem.oracle->cost_model();
  report.counters.batch_size = settings.batch_size;
  report.counters.offline = construction_cost;
  report.samples.resize(settings.n_mc);
  report.hf_growth.push_back({0, construction_cost});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    SampleRecord& rec = report.samples[i];
    rec.order = i;
    for (std::size_t j = 0; j < surrogate.frequency_count(); ++j) {
      const Complex s = surrogate.evaluate(samples[i], j);
      const double db = to_db(std::max(std::abs(s), kMagnitudeFloor));
      FrequencyTrace t{j, {db, db, db}, false, problem.spec.clause_for(j).satisfied_by(db)};
      rec.trace.push_back(t);
      if (!t.passed) {
        rec.verdict = Verdict::rejected;
        rec.stop_frequency = j;
        break;
      }
    }
    report.hf_growth.push_back({i + 1, construction_cost});
  }
  detail::finalize(report);
  return report;
}

inline RunReport estimate_linearized(const Problem& problem, const EstimatorSettings& settings, double step) {
  std::size_t cost = 0;
  const LinearSurrogate s = build_linear(problem.distribution.mean(), step, *problem.oracle, &cost);
  return estimate_linearized(problem, settings, s, cost);
}

struct SweepRow {
  double upsilon = 0.0;
  double yield_mc = 0.0;
  double yield_gpr_hybrid = 0.0;
  std::vector<double> yield_linearized;  ///< parallel to the step list
  std::size_t hf_mc = 0;
  std::size_t hf_gpr_hybrid = 0;
  bool verdicts_match = false;  ///< GPR-hybrid and MC agree on every sample
  std::size_t n_mc = 0;

  double sigma_estimate() const { return std::sqrt(yield_mc * (1.0 - yield_mc) / static_cast<double>(n_mc)); }
  double max_linearized_deviation() const {
    double worst = 0.0;
    for (double y : yield_linearized) worst = std::max(worst, std::abs(y - yield_mc));
    return worst;
  }
};

struct SweepTable {
  std::vector<double> steps;
  std::vector<SweepRow> rows;
};

/// For each covariance scale: pure MC, GPR-hybrid and linearized yields on the same sample sequence.
inline SweepTable upsilon_sweep(const Problem& problem, const EstimatorSettings& settings,
                                const std::vector<double>& upsilons, const std::vector<double>& steps) {
  SweepTable table;
  table.steps = steps;
  for (double upsilon : upsilons) {
    if (!(upsilon >= 0.0 && upsilon <= 1.0)) throw InvalidArgument("upsilon_sweep: upsilon must lie in [0, 1]");
    Problem scaled{problem.distribution.scaled(upsilon), problem.spec, problem.oracle};
    SweepRow row;
    row.upsilon = upsilon;
    row.n_mc = settings.n_mc;
    const RunReport mc = estimate_pure_mc(scaled, settings);
    const RunReport gprh = estimate_gpr_hybrid(scaled, settings);
    row.yield_mc = mc.yield;
    row.yield_gpr_hybrid = gprh.yield;
    row.hf_mc = mc.counters.total();
    row.hf_gpr_hybrid = gprh.counters.total();
    row.verdicts_match = mc.verdicts() == gprh.verdicts();
    for (double step : steps) row.yield_linearized.push_back(estimate_linearized(scaled, settings, step).yield);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace gpyield

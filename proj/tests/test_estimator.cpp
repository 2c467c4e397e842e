#include "gpyield/estimator.hpp"

#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

using namespace gpyield;
using gpyield::testing::FunctionOracle;

namespace {

double simpson(const std::function<double(double)>& f, double a, double b, int n = 4000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

TruncatedGaussian box2d() {
  return TruncatedGaussian::independent(Vector::Zero(2), Vector::Ones(2), Vector::Constant(2, -2.5),
                                        Vector::Constant(2, 2.5));
}

Problem smooth_problem(std::size_t nf = 3, CostModel cost = CostModel::per_frequency) {
  return {box2d(), PerformanceSpec::upper_bound(-24.0, nf),
          std::make_shared<FunctionOracle>(2, nf, gpyield::testing::smooth_response, cost)};
}

EstimatorSettings small(std::size_t n_mc = 400) {
  EstimatorSettings s;
  s.n_mc = n_mc;
  s.batch_size = 10;
  s.initial_training = 6;
  s.seed = 3;
  return s;
}

FunctionOracle& spy(const Problem& p) { return dynamic_cast<FunctionOracle&>(*p.oracle); }

}  // namespace

TEST(SampleSize, WorstCaseRule) {
  EXPECT_EQ(mc_sample_size(0.01), 2500u);
  EXPECT_EQ(0.5 / std::sqrt(2500.0), 0.01);
  EXPECT_EQ(mc_sample_size(0.5), 1u);
  EXPECT_EQ(mc_sample_size(0.005), 10000u);
  EXPECT_EQ(mc_sample_size(0.02), 625u);
  EXPECT_EQ(mc_sample_size(0.03), 278u);
  EXPECT_THROW(mc_sample_size(0.0), InvalidArgument);
  EXPECT_THROW(mc_sample_size(0.6), InvalidArgument);
  EXPECT_THROW(mc_sample_size(-0.1), InvalidArgument);
}

TEST(SampleSize, SmallestSufficientN) {
  for (double t : {0.001, 0.0123, 0.05, 0.1, 0.25, 0.3333}) {
    const std::size_t n = mc_sample_size(t);
    EXPECT_LE(0.5 / std::sqrt(static_cast<double>(n)), t);
    if (n > 1) EXPECT_GT(0.5 / std::sqrt(static_cast<double>(n - 1)), t);
  }
}

TEST(PureMc, IntervalYieldMatchesTruncatedMass) {
  // |S| = 0.1 |p|: safe iff |p| <= 10^(-24/20) / 0.1.
  const double edge = std::pow(10.0, -24.0 / 20.0) / 0.1;
  Problem problem{TruncatedGaussian(Vector{{0.0}}, Matrix::Identity(1, 1), Vector{{-2.0}}, Vector{{2.0}}),
                  PerformanceSpec::upper_bound(-24.0, 1),
                  std::make_shared<FunctionOracle>(1, 1, [](const Vector& p, std::size_t) {
                    return Complex(0.1 * std::abs(p[0]), 0.0);
                  })};
  auto pdf = [](double x) { return std::exp(-0.5 * x * x); };
  const double q = simpson(pdf, -edge, edge) / simpson(pdf, -2.0, 2.0);
  EstimatorSettings s = small(20000);
  const RunReport r = estimate_pure_mc(problem, s);
  EXPECT_NEAR(r.yield, q, 3.0 * std::sqrt(q * (1.0 - q) / 20000.0));
  EXPECT_EQ(r.counters.online, 20000u);
}

TEST(PureMc, AlwaysSafeSpecCostsEveryFrequency) {
  Problem problem = smooth_problem(3);
  problem.spec = PerformanceSpec::upper_bound(100.0, 3);
  const RunReport r = estimate_pure_mc(problem, small());
  EXPECT_EQ(r.yield, 1.0);
  EXPECT_EQ(r.counters.online, 400u * 3u);
  EXPECT_EQ(r.counters.offline, 0u);
  EXPECT_DOUBLE_EQ(r.reduction_factor(), 1.0);
}

TEST(PureMc, ShortCircuitAccounting) {
  Problem problem = smooth_problem(4);
  const RunReport r = estimate_pure_mc(problem, small());
  std::size_t expected = 0;
  for (const auto& s : r.samples) {
    const std::size_t used = s.verdict == Verdict::rejected ? *s.stop_frequency + 1 : 4;
    EXPECT_EQ(s.hf_cost, used);
    expected += used;
  }
  EXPECT_EQ(r.counters.online, expected);
  EXPECT_EQ(spy(problem).frequency_evaluations.load(), expected);
  EXPECT_EQ(r.accepted, static_cast<std::size_t>(std::count_if(
                            r.samples.begin(), r.samples.end(), [](const auto& s) { return s.verdict == Verdict::accepted; })));
  EXPECT_EQ(r.yield, static_cast<double>(r.accepted) / 400.0);
  EXPECT_GT(r.yield, 0.05);
  EXPECT_LT(r.yield, 0.95);
}

TEST(GprHybrid, MatchesPureMcVerdicts) {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    Problem problem = smooth_problem();
    EstimatorSettings s = small(600);
    s.seed = seed;
    const RunReport mc = estimate_pure_mc(problem, s);
    const RunReport h = estimate_gpr_hybrid(problem, s);
    EXPECT_EQ(h.verdicts(), mc.verdicts()) << "seed " << seed;
    EXPECT_EQ(h.yield, mc.yield);
    EXPECT_LT(h.counters.total(), mc.counters.total());
  }
}

TEST(GprHybrid, CounterIdentities) {
  Problem problem = smooth_problem(3);
  const EstimatorSettings s = small();
  const RunReport r = estimate_gpr_hybrid(problem, s);
  EXPECT_EQ(r.counters.offline, s.initial_training * 3);
  EXPECT_EQ(r.counters.total(), r.counters.offline + r.counters.online);
  EXPECT_EQ(r.counters.total(), spy(problem).frequency_evaluations.load());
  EXPECT_EQ(r.counters.effective(), (r.counters.total() + s.batch_size - 1) / s.batch_size);
  EXPECT_EQ(r.counters.effective_online(), (r.counters.online + s.batch_size - 1) / s.batch_size);
  std::size_t per_sample = 0;
  for (const auto& rec : r.samples) per_sample += rec.hf_cost;
  EXPECT_EQ(per_sample, r.counters.online);
  ASSERT_EQ(r.hf_growth.size(), s.n_mc + 1);
  EXPECT_EQ(r.hf_growth.front().total_hf, r.counters.offline);
  EXPECT_EQ(r.hf_growth.back().total_hf, r.counters.total());
  for (std::size_t k = 1; k < r.hf_growth.size(); ++k) EXPECT_GE(r.hf_growth[k].total_hf, r.hf_growth[k - 1].total_hf);
  EXPECT_EQ(r.final_kernels.size(), 3u);
}

TEST(GprHybrid, OfflineCostScalesWithTrainingSize) {
  for (std::size_t ti : {5u, 10u, 30u}) {
    Problem problem = smooth_problem(11);
    EstimatorSettings s = small(50);
    s.initial_training = ti;
    EXPECT_EQ(estimate_gpr_hybrid(problem, s).counters.offline, 11 * ti);
  }
}

TEST(GprHybrid, PerCallCostModel) {
  Problem problem = smooth_problem(3, CostModel::per_call);
  const EstimatorSettings s = small();
  const RunReport r = estimate_gpr_hybrid(problem, s);
  EXPECT_EQ(r.counters.offline, s.initial_training);
  EXPECT_EQ(r.counters.total(), spy(problem).calls.load());
  std::size_t escalated = 0;
  for (const auto& rec : r.samples) {
    escalated += rec.surrogate_only() ? 0 : 1;
    EXPECT_LE(rec.hf_cost, 1u);
  }
  EXPECT_EQ(escalated, r.counters.online);
}

TEST(GprHybrid, ZeroToleranceInsertsEveryCriticalPoint) {
  Problem problem = smooth_problem();
  EstimatorSettings s = small();
  s.tolerance = 0.0;
  const RunReport r = estimate_gpr_hybrid(problem, s);
  ASSERT_FALSE(r.batches.empty());
  for (const auto& b : r.batches) {
    for (std::size_t j = 0; j < b.critical_per_frequency.size(); ++j) {
      // The greedy loop only stops early if the error reached exactly zero.
      if (b.final_error_db[j] > 0.0) EXPECT_EQ(b.added_per_frequency[j], b.critical_per_frequency[j]);
    }
  }
}

TEST(GprHybrid, LooseToleranceAddsFewerPoints) {
  Problem problem = smooth_problem();
  EstimatorSettings s = small();
  s.update_models = true;
  s.tolerance = 50.0;
  const RunReport r = estimate_gpr_hybrid(problem, s);
  for (const auto& b : r.batches) {
    for (std::size_t j = 0; j < b.added_per_frequency.size(); ++j) {
      EXPECT_LE(b.added_per_frequency[j], b.critical_per_frequency[j]);
      EXPECT_LE(b.final_error_db[j], 50.0);
    }
  }
}

TEST(GprHybrid, UpdatesFireAtBatchMultiples) {
  Problem problem = smooth_problem();
  const EstimatorSettings s = small();
  const RunReport r = estimate_gpr_hybrid(problem, s);
  std::size_t previous_multiple = 0;
  for (const auto& b : r.batches) {
    const std::size_t multiple = b.online_hf / s.batch_size;
    EXPECT_GT(multiple, previous_multiple);
    previous_multiple = multiple;
    // Fires on the first point that crosses the multiple.
    EXPECT_LT(r.hf_growth[b.considered - 1].total_hf - r.counters.offline, multiple * s.batch_size);
  }
}

TEST(GprHybrid, DeterministicAcrossRunsAndWorkers) {
  Problem problem = smooth_problem();
  EstimatorSettings s = small();
  const RunReport a = estimate_gpr_hybrid(problem, s);
  const RunReport b = estimate_gpr_hybrid(problem, s);
  s.workers = 4;
  const RunReport c = estimate_gpr_hybrid(problem, s);
  for (const RunReport* r : {&b, &c}) {
    EXPECT_EQ(r->verdicts(), a.verdicts());
    EXPECT_EQ(r->counters.online, a.counters.online);
    EXPECT_EQ(r->counters.offline, a.counters.offline);
    ASSERT_EQ(r->batches.size(), a.batches.size());
    for (std::size_t k = 0; k < a.batches.size(); ++k) EXPECT_EQ(r->batches[k].final_error_db, a.batches[k].final_error_db);
  }
}

TEST(GprHybrid, RetuneAndReevaluateStillMatchMc) {
  Problem problem = smooth_problem();
  EstimatorSettings s = small(600);
  s.retune_each_batch = true;
  s.reevaluate_noncritical = true;
  const RunReport r = estimate_gpr_hybrid(problem, s);
  EXPECT_EQ(r.verdicts(), estimate_pure_mc(problem, s).verdicts());
  for (const auto& rec : r.samples) EXPECT_TRUE(rec.stop_frequency.has_value() == (rec.verdict == Verdict::rejected));
}

TEST(GprHybrid, AuditedBandsImplyYieldEquality) {
  Problem problem = smooth_problem();
  const EstimatorSettings s = small(600);
  const RunReport r = estimate_gpr_hybrid(problem, s);
  const auto samples = problem.distribution.sample(s.n_mc, s.seed);
  bool all_inside = true;
  for (std::size_t i = 0; i < samples.size(); i += 20) {
    for (const auto& t : r.samples[i].trace) {
      if (t.escalated) continue;
      const double truth = to_db(gpyield::testing::smooth_response(samples[i], t.frequency));
      all_inside = all_inside && truth >= t.band.lower_db && truth <= t.band.upper_db;
    }
  }
  if (all_inside) EXPECT_EQ(r.yield, estimate_pure_mc(problem, s).yield);
}

TEST(Sorted, FrozenModelsOnlyReorderWork) {
  Problem problem = smooth_problem();
  EstimatorSettings s = small();
  s.update_models = false;
  const RunReport plain = estimate_gpr_hybrid(problem, s);
  for (auto crit : {SortingCriterion::egl, SortingCriterion::hybrid}) {
    s.sorting = crit;
    const RunReport sorted = estimate_sorted(problem, s);
    EXPECT_EQ(sorted.verdicts(), plain.verdicts());
    EXPECT_EQ(sorted.yield, plain.yield);
    EXPECT_EQ(sorted.counters.online, plain.counters.online);
    bool permuted = false;
    for (std::size_t i = 0; i < s.n_mc; ++i) permuted = permuted || sorted.samples[i].order != i;
    EXPECT_TRUE(permuted);
  }
}

TEST(Sorted, HybridCriterionVisitsCriticalPointsFirst) {
  Problem problem = smooth_problem();
  EstimatorSettings s = small();
  s.update_models = false;
  s.sorting = SortingCriterion::hybrid;
  // Without short-circuit, escalating exactly means a positive criterion.
  s.hybrid.short_circuit = false;
  const RunReport r = estimate_sorted(problem, s);
  // With frozen models every escalating point precedes every surrogate-only point.
  std::size_t last_escalated = 0;
  std::size_t first_quiet = s.n_mc;
  for (const auto& rec : r.samples) {
    if (rec.surrogate_only()) first_quiet = std::min(first_quiet, rec.order);
    else last_escalated = std::max(last_escalated, rec.order);
  }
  EXPECT_LT(last_escalated, first_quiet);
}

TEST(Sorted, UpdatedRunsMatchMc) {
  Problem problem = smooth_problem();
  EstimatorSettings s = small(600);
  s.batch_size = 1;
  const auto mc = estimate_pure_mc(problem, s);
  for (auto crit : {SortingCriterion::egl, SortingCriterion::hybrid}) {
    s.sorting = crit;
    const RunReport r = estimate_sorted(problem, s);
    EXPECT_EQ(r.verdicts(), mc.verdicts()) << to_string(crit);
    EXPECT_EQ(r.method, std::string("gpr-hybrid-sorted-") + to_string(crit));
  }
}

TEST(Sorted, RequiresACriterion) {
  Problem problem = smooth_problem();
  EXPECT_THROW(estimate_sorted(problem, small()), InvalidArgument);
}

TEST(Estimator, RejectsInvalidSetups) {
  Problem problem = smooth_problem();
  EstimatorSettings s = small();
  s.initial_training = 0;
  EXPECT_THROW(estimate_gpr_hybrid(problem, s), InvalidArgument);
  s = small();
  s.n_mc = 0;
  EXPECT_THROW(estimate_pure_mc(problem, s), InvalidArgument);
  s = small();
  s.batch_size = 0;
  EXPECT_THROW(estimate_gpr_hybrid(problem, s), InvalidArgument);
  s = small();
  s.tolerance = -1.0;
  EXPECT_THROW(estimate_gpr_hybrid(problem, s), InvalidArgument);
  Problem wrong_dim{TruncatedGaussian(Vector{{0.0}}, Matrix::Identity(1, 1), Vector{{-1.0}}, Vector{{1.0}}),
                    problem.spec, problem.oracle};
  EXPECT_THROW(estimate_pure_mc(wrong_dim, small()), DimensionError);
  Problem wrong_spec{problem.distribution, PerformanceSpec::upper_bound(-24.0, 5), problem.oracle};
  EXPECT_THROW(estimate_gpr_hybrid(wrong_spec, small()), DimensionError);
  Problem no_oracle{problem.distribution, problem.spec, nullptr};
  EXPECT_THROW(estimate_pure_mc(no_oracle, small()), InvalidArgument);
}

TEST(Estimator, OracleFailureAborts) {
  Problem problem{box2d(), PerformanceSpec::upper_bound(-24.0, 2),
                  std::make_shared<FunctionOracle>(2, 2, [](const Vector& p, std::size_t j) {
                    if (p[0] > 1.5) throw OracleDomainError("outside the solver's range");
                    return gpyield::testing::smooth_response(p, j);
                  })};
  EXPECT_THROW(estimate_pure_mc(problem, small()), OracleDomainError);
}

TEST(RunReport, SigmaFormulas) {
  RunReport r;
  r.n_mc = 2500;
  r.yield = 0.9544;
  EXPECT_DOUBLE_EQ(r.sigma_bound(), 0.01);
  EXPECT_NEAR(r.sigma_estimate(), std::sqrt(0.9544 * 0.0456 / 2500.0), 1e-15);
}

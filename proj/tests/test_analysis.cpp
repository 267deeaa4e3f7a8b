#include <gtest/gtest.h>

#include <cmath>

#include "adabatch/analysis.hpp"
#include "adabatch/trace_io.hpp"

using namespace adabatch;

namespace {

RunTrace synthetic_trace(const std::vector<double>& losses,
                         const std::vector<Count>& batches,
                         const std::vector<double>& metrics = {},
                         Count n_train = 100) {
  RunTrace trace;
  Count comps = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    TraceRecord rec;
    rec.k = static_cast<Count>(i);
    rec.batch_size = i < batches.size() ? batches[i] : 0;
    comps += rec.batch_size;
    rec.grad_comps_opt = comps;
    rec.epoch = static_cast<double>(comps) / static_cast<double>(n_train);
    rec.train_loss = losses[i];
    rec.test_metric = i < metrics.size() ? metrics[i] : 0.0;
    rec.lr = 0.1;
    trace.records.push_back(rec);
  }
  return trace;
}

}  // namespace

TEST(FitLinearRate, ExactGeometricDecay) {
  std::vector<double> losses;
  for (int k = 0; k <= 40; ++k) losses.push_back(100.0 * std::pow(0.9, k));
  const RunTrace trace = synthetic_trace(losses, std::vector<Count>(41, 1));
  const FitResult fit = fit_linear_rate(trace, 0.0);
  EXPECT_NEAR(fit.implied_rate, 0.1, 1e-9);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
  EXPECT_NEAR(fit.intercept, std::log(100.0), 1e-9);
}

TEST(FitLinearRate, ConstantTraceHasZeroRate) {
  const RunTrace trace =
      synthetic_trace(std::vector<double>(10, 5.0), std::vector<Count>(10, 1));
  const FitResult fit = fit_linear_rate(trace, 0.0);
  EXPECT_DOUBLE_EQ(fit.slope, 0.0);
  EXPECT_DOUBLE_EQ(fit.implied_rate, 0.0);
  EXPECT_DOUBLE_EQ(fit.r_squared, 1.0);  // flat data, perfect flat fit
}

TEST(FitLinearRate, WindowBelowFStarIsError) {
  const RunTrace trace = synthetic_trace({2.0, 1.0, 0.5}, {1, 1, 1});
  EXPECT_THROW(fit_linear_rate(trace, 1.5), ConfigError);
}

TEST(FitLinearRate, RecoversParametersToOneEMinusSix) {
  std::vector<double> losses;
  for (int k = 0; k <= 60; ++k) losses.push_back(3.75 * std::exp(-0.0625 * k));
  const RunTrace trace = synthetic_trace(losses, std::vector<Count>(61, 1));
  const FitResult fit = fit_linear_rate(trace, 0.0);
  EXPECT_NEAR(fit.slope, -0.0625, 1e-6 * 0.0625);
  EXPECT_NEAR(std::exp(fit.intercept), 3.75, 1e-6 * 3.75);
}

TEST(FitExponentialBatch, SyntheticExponentialGrowth) {
  std::vector<Count> batches;
  std::vector<double> losses;
  for (int k = 0; k <= 40; ++k) {
    batches.push_back(static_cast<Count>(std::llround(2.0 * std::exp(0.17 * k))));
    losses.push_back(1.0);
  }
  const RunTrace trace = synthetic_trace(losses, batches);
  const FitResult fit = fit_exponential_batch(trace);
  EXPECT_NEAR(fit.slope, 0.17, 0.01);
  EXPECT_GE(fit.r_squared, 0.99);
}

TEST(FitExponentialBatch, ConstantBatchHasNoGrowthWindow) {
  const RunTrace trace =
      synthetic_trace(std::vector<double>(10, 1.0), std::vector<Count>(10, 8));
  // no strictly increasing run: the auto window fails, an explicit window fits slope 0
  EXPECT_THROW(fit_exponential_batch(trace), ConfigError);
  const FitResult fit = fit_exponential_batch(trace, Window{1, 9});
  EXPECT_DOUBLE_EQ(fit.slope, 0.0);
}

TEST(FitExponentialBatch, WindowStopsAtCap) {
  std::vector<Count> batches = {0, 2, 4, 8, 16, 32, 64, 64, 64, 64};
  const RunTrace trace =
      synthetic_trace(std::vector<double>(batches.size(), 1.0), batches);
  const FitResult fit = fit_exponential_batch(trace, std::nullopt, 64);
  EXPECT_EQ(fit.k_end, 5);  // the capped tail is excluded
  EXPECT_NEAR(fit.slope, std::log(2.0), 1e-9);
}

TEST(FitPowerBatch, QuadraticGrowthExponent) {
  std::vector<Count> batches;
  std::vector<double> losses;
  for (int k = 0; k <= 120; ++k) {
    batches.push_back(1 + static_cast<Count>(std::llround(0.05 * k * k)));
    losses.push_back(1.0);
  }
  const RunTrace trace = synthetic_trace(losses, batches);
  const FitResult fit = fit_power_batch(trace, Window{20, 120});
  EXPECT_NEAR(fit.slope, 2.0, 0.1);
}

TEST(ThresholdCrossing, FirstCrossingIndex) {
  const RunTrace trace = synthetic_trace({0.0, 1.0, 1.0, 1.0}, {0, 10, 10, 10},
                                         {0.0, 0.5, 0.7, 0.9});
  const ComparisonRow row =
      threshold_crossing(trace, {ThresholdKind::TestMetricAtLeast, 0.8}, "sgd");
  EXPECT_TRUE(row.reached);
  EXPECT_EQ(row.updates_to_target, 3);
  EXPECT_DOUBLE_EQ(row.epochs_to_target, 0.3);
}

TEST(ThresholdCrossing, TargetBelowInitialCrossesAtFirstRecord) {
  const RunTrace trace =
      synthetic_trace({0.0, 1.0, 1.0}, {0, 5, 5}, {0.99, 0.5, 0.6});
  const ComparisonRow row =
      threshold_crossing(trace, {ThresholdKind::TestMetricAtLeast, 0.4});
  EXPECT_EQ(row.updates_to_target, 1);  // the k = 0 row is not a candidate
}

TEST(ThresholdCrossing, NeverCrossed) {
  const RunTrace trace = synthetic_trace({0.0, 1.0}, {0, 5}, {0.1, 0.2});
  const ComparisonRow row =
      threshold_crossing(trace, {ThresholdKind::TestMetricAtLeast, 0.95});
  EXPECT_FALSE(row.reached);
}

TEST(ThresholdCrossing, MonotoneInThreshold) {
  std::vector<double> metrics;
  std::vector<double> losses;
  std::vector<Count> batches;
  Rng rng(3);
  double acc = 0.0;
  for (int k = 0; k < 60; ++k) {
    acc += rng.uniform01() * 0.03;
    metrics.push_back(acc);
    losses.push_back(1.0);
    batches.push_back(k == 0 ? 0 : 4);
  }
  const RunTrace trace = synthetic_trace(losses, batches, metrics);
  Count prev = 0;
  for (double t = 0.05; t < acc; t += 0.05) {
    const ComparisonRow row =
        threshold_crossing(trace, {ThresholdKind::TestMetricAtLeast, t});
    ASSERT_TRUE(row.reached);
    ASSERT_GE(row.updates_to_target, prev);
    prev = row.updates_to_target;
  }
}

TEST(ComparisonReport, GdEpochsEqualUpdates) {
  // a full-batch trace: B = n means epochs == updates at every record
  const Count n = 100;
  const RunTrace trace = synthetic_trace({0.0, 1.0, 0.9, 0.8}, {0, n, n, n},
                                         {0.0, 0.3, 0.6, 0.9}, n);
  const ComparisonRow row =
      threshold_crossing(trace, {ThresholdKind::TestMetricAtLeast, 0.5}, "gd");
  EXPECT_DOUBLE_EQ(row.epochs_to_target, static_cast<double>(row.updates_to_target));
}

TEST(ComparisonReport, IdenticalTracesGiveIdenticalRows) {
  const RunTrace trace = synthetic_trace({0.0, 1.0, 0.9}, {0, 8, 8}, {0.1, 0.5, 0.9});
  const Threshold target{ThresholdKind::TestMetricAtLeast, 0.4};
  const ComparisonRow a = threshold_crossing(trace, target, "x");
  const ComparisonRow b = threshold_crossing(trace, target, "x");
  const auto report = comparison_report({a, b});
  ASSERT_EQ(report.size(), 4u);  // mean, median, q25, q75
  for (const auto& entry : report) {
    EXPECT_EQ(entry.seed_count, 2);
    EXPECT_TRUE(entry.reached);
    EXPECT_DOUBLE_EQ(entry.updates_to_target, static_cast<double>(a.updates_to_target));
  }
}

TEST(ComparisonReport, SortsByMedianEpochsAndSerializesStably) {
  ComparisonRow fast{"fast", 2.0, 20, true};
  ComparisonRow slow{"slow", 9.0, 90, true};
  ComparisonRow never{"never", std::numeric_limits<double>::quiet_NaN(), 0, false};
  const auto report = comparison_report({slow, fast, never});
  EXPECT_EQ(report.front().optimizer, "fast");
  EXPECT_EQ(report.back().optimizer, "never");
  EXPECT_FALSE(report.back().reached);

  const std::string csv_a = report_to_csv(report);
  const std::string csv_b = report_to_csv(comparison_report({slow, fast, never}));
  EXPECT_EQ(csv_a, csv_b);
  EXPECT_NE(csv_a.find(kReportCsvHeader), std::string::npos);
  // unreached rows leave both counts absent
  EXPECT_NE(csv_a.find("never,,,false,1,mean"), std::string::npos);
}

TEST(TraceCsv, RoundTripsExactly) {
  std::vector<double> losses;
  std::vector<Count> batches;
  Rng rng(7);
  losses.push_back(3.0);
  batches.push_back(0);
  for (int k = 1; k <= 30; ++k) {
    losses.push_back(std::exp(rng.normal()));
    batches.push_back(1 + rng.uniform_int(0, 63));
  }
  const RunTrace trace = synthetic_trace(losses, batches);
  const std::string csv = trace_to_csv(trace);
  const RunTrace back = trace_from_csv(csv);
  ASSERT_EQ(back.records.size(), trace.records.size());
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    ASSERT_EQ(back.records[i].k, trace.records[i].k);
    ASSERT_EQ(back.records[i].batch_size, trace.records[i].batch_size);
    ASSERT_EQ(back.records[i].train_loss, trace.records[i].train_loss);  // bit exact
    ASSERT_EQ(back.records[i].epoch, trace.records[i].epoch);
  }
  EXPECT_EQ(trace_to_csv(back), csv);
}

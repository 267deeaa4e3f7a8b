#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "adabatch/engine.hpp"

namespace adabatch {

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  Count k_start = 0;
  Count k_end = 0;  // inclusive
  double implied_rate = 0.0;  // 1 - e^slope, filled by fit_linear_rate
};

namespace detail {

// least squares y = slope x + intercept; flat data is a perfect flat fit
inline FitResult fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() < 2 || xs.size() != ys.size())
    throw ConfigError("fit_line: need at least two aligned points");
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double mean_y_probe = sy / n;
  double flat_probe = 0.0;
  for (double y : ys) flat_probe += (y - mean_y_probe) * (y - mean_y_probe);
  FitResult fit;
  if (flat_probe <= 1e-30 * std::max(1.0, mean_y_probe * mean_y_probe)) {
    fit.slope = 0.0;  // flat data, perfect flat fit
    fit.intercept = mean_y_probe;
    fit.r_squared = 1.0;
    return fit;
  }
  const double denom = n * sxx - sx * sx;
  fit.slope = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double mean_y = sy / n;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double pred = fit.slope * xs[i] + fit.intercept;
    ss_res += (ys[i] - pred) * (ys[i] - pred);
    ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
  }
  fit.r_squared = ss_tot > 1e-30 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : 1.0;
  return fit;
}

}  // namespace detail

struct Window {
  Count k_start = 0;
  Count k_end = std::numeric_limits<Count>::max();  // inclusive
};

// Fit ln(F_k - F*) against k over the window; the implied per-update
// contraction rate is r_hat = 1 - e^slope.
inline FitResult fit_linear_rate(const RunTrace& trace, double f_star,
                                 Window window = {}) {
  std::vector<double> xs, ys;
  for (const TraceRecord& rec : trace.records) {
    if (rec.k < window.k_start || rec.k > window.k_end) continue;
    const double gap = rec.train_loss - f_star;
    if (gap <= 0.0)
      throw ConfigError("fit_linear_rate: windowed loss at or below f_star, cannot fit");
    xs.push_back(static_cast<double>(rec.k));
    ys.push_back(std::log(gap));
  }
  if (xs.size() < 2) throw ConfigError("fit_linear_rate: fewer than two records in window");
  FitResult fit = detail::fit_line(xs, ys);
  fit.k_start = static_cast<Count>(xs.front());
  fit.k_end = static_cast<Count>(xs.back());
  fit.implied_rate = 1.0 - std::exp(fit.slope);
  return fit;
}

namespace detail {

// Growth window: the longest run of strictly increasing batch sizes among
// the records before any cap, ties broken toward the later window.
inline std::pair<std::size_t, std::size_t> growth_window(
    const std::vector<TraceRecord>& records, Count b_max) {
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].k < 1 || records[i].batch_size < 1) continue;
    if (b_max > 0 && records[i].batch_size >= b_max) break;  // cap reached
    usable.push_back(i);
  }
  if (usable.size() < 2) throw ConfigError("growth window: not enough usable records");

  std::size_t best_lo = 0, best_hi = 0, lo = 0;
  for (std::size_t j = 1; j <= usable.size(); ++j) {
    const bool rising = j < usable.size() &&
                        records[usable[j]].batch_size > records[usable[j - 1]].batch_size;
    if (!rising) {
      if (j - 1 - lo >= best_hi - best_lo) {  // >= prefers the later window
        best_lo = lo;
        best_hi = j - 1;
      }
      lo = j;
    }
  }
  if (best_hi == best_lo) throw ConfigError("growth window: no strictly increasing run");
  return {usable[best_lo], usable[best_hi]};
}

}  // namespace detail

// Fit ln B_k against k over the growth window (auto-selected unless given).
inline FitResult fit_exponential_batch(const RunTrace& trace,
                                       std::optional<Window> window = {},
                                       Count b_max = 0) {
  std::vector<double> xs, ys;
  if (window) {
    for (const TraceRecord& rec : trace.records) {
      if (rec.k < window->k_start || rec.k > window->k_end || rec.batch_size < 1) continue;
      xs.push_back(static_cast<double>(rec.k));
      ys.push_back(std::log(static_cast<double>(rec.batch_size)));
    }
  } else {
    const auto [lo, hi] = detail::growth_window(trace.records, b_max);
    for (std::size_t i = lo; i <= hi; ++i) {
      xs.push_back(static_cast<double>(trace.records[i].k));
      ys.push_back(std::log(static_cast<double>(trace.records[i].batch_size)));
    }
  }
  if (xs.size() < 2)
    throw ConfigError("fit_exponential_batch: fewer than two records in window");
  FitResult fit = detail::fit_line(xs, ys);
  fit.k_start = static_cast<Count>(xs.front());
  fit.k_end = static_cast<Count>(xs.back());
  return fit;
}

// Fit ln B_k against ln k over the growth window; the slope is the power-law
// exponent of a passive schedule (2 for quadratic growth).
inline FitResult fit_power_batch(const RunTrace& trace,
                                 std::optional<Window> window = {},
                                 Count b_max = 0) {
  std::vector<double> xs, ys;
  const auto add = [&](const TraceRecord& rec) {
    if (rec.k < 1 || rec.batch_size < 1) return;
    xs.push_back(std::log(static_cast<double>(rec.k)));
    ys.push_back(std::log(static_cast<double>(rec.batch_size)));
  };
  if (window) {
    for (const TraceRecord& rec : trace.records)
      if (rec.k >= window->k_start && rec.k <= window->k_end) add(rec);
  } else {
    const auto [lo, hi] = detail::growth_window(trace.records, b_max);
    for (std::size_t i = lo; i <= hi; ++i) add(trace.records[i]);
  }
  if (xs.size() < 2) throw ConfigError("fit_power_batch: fewer than two records in window");
  FitResult fit = detail::fit_line(xs, ys);
  fit.k_start = static_cast<Count>(std::llround(std::exp(xs.front())));
  fit.k_end = static_cast<Count>(std::llround(std::exp(xs.back())));
  return fit;
}

struct ComparisonRow {
  std::string optimizer;
  double epochs_to_target = std::numeric_limits<double>::quiet_NaN();
  Count updates_to_target = 0;
  bool reached = false;
};

// First post-update record satisfying the threshold. The k = 0 row describes
// the initial model and is never a crossing candidate.
inline ComparisonRow threshold_crossing(const RunTrace& trace, const Threshold& target,
                                        std::string optimizer_name = "") {
  if (!std::isfinite(target.value)) throw ConfigError("threshold_crossing: target not finite");
  ComparisonRow row;
  row.optimizer = std::move(optimizer_name);
  for (const TraceRecord& rec : trace.records) {
    if (rec.k < 1) continue;
    if (target.satisfied(rec.train_loss, rec.test_metric)) {
      row.reached = true;
      row.updates_to_target = rec.k;
      row.epochs_to_target = rec.epoch;
      return row;
    }
  }
  return row;
}

struct ComparisonEntry {
  std::string optimizer;
  std::string aggregation;  // mean | median | q25 | q75
  double epochs_to_target = std::numeric_limits<double>::quiet_NaN();
  double updates_to_target = std::numeric_limits<double>::quiet_NaN();
  bool reached = false;  // true iff every seed crossed
  Count seed_count = 0;
};

namespace detail {

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace detail

// Aggregate per-seed crossings into mean / median / interquartile entries,
// grouped by optimizer name and sorted by median epochs-to-target.
inline std::vector<ComparisonEntry> comparison_report(
    const std::vector<ComparisonRow>& rows) {
  std::vector<std::string> names;
  for (const auto& row : rows)
    if (std::find(names.begin(), names.end(), row.optimizer) == names.end())
      names.push_back(row.optimizer);

  struct Group {
    std::string name;
    std::vector<double> epochs, updates;
    Count seeds = 0;
    bool all_reached = true;
  };
  std::vector<Group> groups;
  for (const auto& name : names) {
    Group g;
    g.name = name;
    for (const auto& row : rows) {
      if (row.optimizer != name) continue;
      ++g.seeds;
      if (!row.reached) {
        g.all_reached = false;
        continue;
      }
      g.epochs.push_back(row.epochs_to_target);
      g.updates.push_back(static_cast<double>(row.updates_to_target));
    }
    groups.push_back(std::move(g));
  }

  std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    const double ma = a.epochs.empty() ? std::numeric_limits<double>::infinity()
                                       : detail::quantile(a.epochs, 0.5);
    const double mb = b.epochs.empty() ? std::numeric_limits<double>::infinity()
                                       : detail::quantile(b.epochs, 0.5);
    return ma < mb;
  });

  std::vector<ComparisonEntry> out;
  for (const Group& g : groups) {
    const char* aggs[] = {"mean", "median", "q25", "q75"};
    for (const char* agg : aggs) {
      ComparisonEntry e;
      e.optimizer = g.name;
      e.aggregation = agg;
      e.reached = g.all_reached && !g.epochs.empty();
      e.seed_count = g.seeds;
      if (!g.epochs.empty()) {
        const std::string a(agg);
        if (a == "mean") {
          e.epochs_to_target = std::accumulate(g.epochs.begin(), g.epochs.end(), 0.0) /
                               static_cast<double>(g.epochs.size());
          e.updates_to_target = std::accumulate(g.updates.begin(), g.updates.end(), 0.0) /
                                static_cast<double>(g.updates.size());
        } else {
          const double q = a == "median" ? 0.5 : (a == "q25" ? 0.25 : 0.75);
          e.epochs_to_target = detail::quantile(g.epochs, q);
          e.updates_to_target = detail::quantile(g.updates, q);
        }
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace adabatch

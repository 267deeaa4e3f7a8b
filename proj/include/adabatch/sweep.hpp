#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adabatch/experiment.hpp"

namespace adabatch {

// A sweep document is a base experiment plus
//   [variant.<name>]  key = value ...     named override sets (one per optimizer)
//   [sweep]           schedule.m = [..]   array-valued grid axes
// The grid is variants x the Cartesian product of the sweep axes; every
// combination runs all seeds. Problem keys may not vary across the grid so
// every trace shares one dataset and target.
struct SweepPlan {
  struct Combo {
    std::string label;           // variant plus grid assignments
    ExperimentConfig config;
  };
  std::vector<Combo> combos;
  Threshold report_target;
};

inline SweepPlan expand_sweep(const KvDocument& doc, std::size_t max_combinations = 256) {
  // variant names, in document order
  std::vector<std::string> variants;
  for (const std::string& key : doc.keys_with_prefix("variant.")) {
    const std::size_t dot = key.find('.', 8);
    if (dot == std::string::npos) throw ConfigError("malformed variant key: " + key);
    const std::string name = key.substr(8, dot - 8);
    if (std::find(variants.begin(), variants.end(), name) == variants.end())
      variants.push_back(name);
  }
  if (variants.empty()) variants.push_back("");

  // grid axes
  struct Axis {
    std::string key;
    std::vector<KvDocument::Value> values;
  };
  std::vector<Axis> axes;
  for (const std::string& key : doc.keys_with_prefix("sweep.")) {
    if (key == "sweep.max_combinations") continue;
    Axis axis;
    axis.key = key.substr(6);
    if (axis.key.rfind("problem.", 0) == 0)
      throw ConfigError("sweep may not vary problem parameters (" + axis.key + ")");
    const KvDocument::Value& v = doc.values().at(key);
    if (const auto* nums = std::get_if<std::vector<double>>(&v)) {
      for (double d : *nums) axis.values.emplace_back(d);
    } else if (const auto* strs = std::get_if<std::vector<std::string>>(&v)) {
      for (const auto& s : *strs) axis.values.emplace_back(s);
    } else {
      throw ConfigError("sweep axis '" + key + "' must be an array");
    }
    if (axis.values.empty()) throw ConfigError("sweep axis '" + key + "' is empty");
    axes.push_back(std::move(axis));
  }

  std::size_t total = variants.size();
  for (const Axis& axis : axes) total *= axis.values.size();
  if (total == 0) throw ConfigError("sweep grid is empty");
  const std::size_t limit = doc.has("sweep.max_combinations")
                                ? static_cast<std::size_t>(doc.get_int("sweep.max_combinations"))
                                : max_combinations;
  if (total > limit)
    throw ConfigError("sweep grid has " + std::to_string(total) +
                      " combinations, above the limit of " + std::to_string(limit));

  // forbid per-variant problem overrides: all traces must share the dataset
  for (const std::string& key : doc.keys_with_prefix("variant."))
    if (key.find(".problem.") != std::string::npos)
      throw ConfigError("variants may not change problem parameters (" + key + ")");

  SweepPlan plan;
  std::vector<std::size_t> cursor(axes.size(), 0);
  for (;;) {
    for (const std::string& variant : variants) {
      KvDocument combo = doc;
      std::string label = variant.empty() ? "base" : variant;
      if (!variant.empty()) {
        const std::string prefix = "variant." + variant + ".";
        for (const std::string& key : doc.keys_with_prefix(prefix))
          combo.set(key.substr(prefix.size()), doc.values().at(key));
      }
      for (std::size_t a = 0; a < axes.size(); ++a) {
        combo.set(axes[a].key, axes[a].values[cursor[a]]);
        std::string rendered;
        std::visit(
            [&](const auto& v) {
              using T = std::decay_t<decltype(v)>;
              if constexpr (std::is_same_v<T, double>) {
                rendered = detail::fmt_double(v);
              } else if constexpr (std::is_same_v<T, std::string>) {
                rendered = v;
              }
            },
            axes[a].values[cursor[a]]);
        label += "__" + axes[a].key.substr(axes[a].key.rfind('.') + 1) + "=" + rendered;
      }
      combo.set("run.name", doc.get_string_or("run.name", "sweep") + "__" + label);
      SweepPlan::Combo entry;
      entry.label = label;
      entry.config = experiment_from_document(combo);
      plan.combos.push_back(std::move(entry));
    }
    // advance the mixed-radix cursor
    std::size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++cursor[a] < axes[a].values.size()) break;
      cursor[a] = 0;
    }
    if (a == axes.size()) break;
  }

  // the report target defaults to the stopping target of the base config
  if (doc.has("report.target_test_metric"))
    plan.report_target = {ThresholdKind::TestMetricAtLeast,
                          doc.get_number("report.target_test_metric")};
  else if (doc.has("report.target_train_loss"))
    plan.report_target = {ThresholdKind::TrainLossBelow,
                          doc.get_number("report.target_train_loss")};
  else if (doc.has("report.target_test_loss"))
    plan.report_target = {ThresholdKind::TestMetricAtMost,
                          doc.get_number("report.target_test_loss")};
  else if (plan.combos.front().config.stop.target)
    plan.report_target = *plan.combos.front().config.stop.target;
  else
    throw ConfigError("sweep needs a report.target_* key or a stop target");
  return plan;
}

struct SweepResult {
  std::vector<ComparisonRow> rows;            // one per (combo, seed)
  std::vector<ComparisonEntry> report;        // aggregated
};

inline SweepResult run_sweep(const SweepPlan& plan,
                             const std::optional<std::filesystem::path>& out_dir,
                             int jobs = 1) {
  SweepResult result;
  for (const SweepPlan::Combo& combo : plan.combos) {
    const std::vector<RunArtifacts> runs = run_experiment(combo.config, out_dir, jobs);
    for (const RunArtifacts& art : runs) {
      ComparisonRow row = threshold_crossing(art.trace, plan.report_target, combo.label);
      result.rows.push_back(std::move(row));
    }
  }
  result.report = comparison_report(result.rows);
  return result;
}

}  // namespace adabatch

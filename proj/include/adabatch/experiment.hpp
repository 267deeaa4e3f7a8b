#pragma once

#include <atomic>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "adabatch/config.hpp"
#include "adabatch/diagnostics.hpp"
#include "adabatch/trace_io.hpp"

namespace adabatch {

// Materialize the dataset + objective described by a problem spec.
inline ProblemInstance build_problem(const ProblemSpec& spec) {
  if (!spec.csv_path.empty()) {
    Dataset ds = load_csv_classification(spec.csv_path, spec.test_fraction, spec.seed,
                                         spec.interactions);
    return make_multiclass_logistic(std::move(ds), spec.weight_decay);
  }
  switch (spec.kind) {
    case ProblemKind::LeastSquares: {
      Dataset ds = gen_linear_data(spec.n, spec.d, spec.noise, spec.test_fraction, spec.seed);
      return make_least_squares(std::move(ds), spec.weight_decay);
    }
    case ProblemKind::LinearNet: {
      Dataset ds = gen_linear_data(spec.n, spec.d, spec.noise, spec.test_fraction, spec.seed);
      return make_linear_net(std::move(ds), spec.weight_decay);
    }
    case ProblemKind::MulticlassLogistic: {
      Dataset ds = gen_multiclass_data(spec.n, spec.d, spec.classes, spec.separation,
                                       spec.seed, spec.test_fraction, spec.anisotropy);
      if (spec.interactions) ds.x_train = polynomial_features(ds.x_train, 2);
      if (spec.interactions && ds.n_test() > 0)
        ds.x_test = polynomial_features(ds.x_test, 2);
      return make_multiclass_logistic(std::move(ds), spec.weight_decay);
    }
  }
  throw ConfigError("unreachable problem kind");
}

// Resolve F* per the configured source. The ERM route is exact for
// LeastSquares and is the linear-fit optimum for LinearNet (the factorized
// net spans exactly the linear predictors).
inline double resolve_f_star(const ExperimentConfig& cfg, const ProblemInstance& p) {
  switch (cfg.f_star_source) {
    case FStarSource::Zero: return 0.0;
    case FStarSource::Explicit: return cfg.f_star_explicit;
    case FStarSource::Erm: return erm_reference(p).train_loss;
  }
  return 0.0;
}

// Translate a config (plus one sampling seed) into engine options.
inline RunOptions make_run_options(const ExperimentConfig& cfg, const ProblemInstance& p,
                                   std::uint64_t seed) {
  RunOptions opts;
  opts.policy = cfg.schedule;
  opts.policy.f_star = resolve_f_star(cfg, p);
  opts.lr = cfg.lr;
  opts.optimizer = cfg.optimizer;
  opts.stop = cfg.stop;
  opts.sampling = cfg.sampling;
  opts.seed = seed;
  opts.init_seed = cfg.init_seed;
  opts.eval_every = cfg.eval_every;
  opts.track_m_squared = cfg.track_m_squared;
  if (cfg.erm_target_factor > 0.0)
    opts.stop.target = Threshold{ThresholdKind::TestMetricAtMost,
                                 cfg.erm_target_factor * erm_reference(p).test_loss};
  if (cfg.lr.kind == LrKind::Prescribed) {
    if (std::isfinite(cfg.prescribed_alpha) && std::isfinite(cfg.prescribed_beta)) {
      opts.alpha = cfg.prescribed_alpha;
      opts.beta = cfg.prescribed_beta;
    } else {
      const ProblemConstants constants = quadratic_constants(p);
      opts.alpha = constants.alpha;
      opts.beta = constants.beta;
    }
    opts.m_sq_override = cfg.prescribed_m_sq;
  }
  return opts;
}

inline nlohmann::json config_echo(const KvDocument& doc) {
  nlohmann::json echo = nlohmann::json::object();
  for (const auto& [key, value] : doc.values()) {
    std::visit([&](const auto& v) { echo[key] = v; }, value);
  }
  return echo;
}

inline nlohmann::json summarize_trace(const ExperimentConfig& cfg, const RunTrace& trace,
                                      std::uint64_t seed) {
  const TraceRecord& last = trace.final_record();
  nlohmann::json j;
  j["name"] = cfg.name;
  j["seed"] = seed;
  j["status"] = to_string(trace.status);
  j["sampling"] = to_string(trace.sampling);
  j["updates"] = last.k;
  j["epochs"] = last.epoch;
  j["train_loss"] = last.train_loss;
  j["test_metric"] = last.test_metric;
  j["grad_comps_opt"] = last.grad_comps_opt;
  j["grad_comps_eval"] = last.grad_comps_eval;
  j["crossover_k"] = trace.crossover_k;
  j["f_star_used"] = trace.f_star_used;
  j["c_used"] = trace.c_used;
  j["gamma0_used"] = trace.gamma0_used;
  if (!trace.m_sq_source.empty()) j["m_sq_source"] = trace.m_sq_source;
  return j;
}

struct RunArtifacts {
  std::uint64_t seed = 0;
  RunTrace trace;
  std::filesystem::path trace_path;
  std::filesystem::path summary_path;
};

// Execute every seed of a configured experiment, optionally writing
// per-seed trace CSV + JSON summary files under out_dir. Seeds execute in a
// small worker pool; each worker owns its run and writes atomically.
inline std::vector<RunArtifacts> run_experiment(
    const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir,
    int jobs = 1, const nlohmann::json& echo = {},
    const std::string& trace_format = "csv") {
  const ProblemInstance problem = build_problem(cfg.problem);

  std::vector<RunArtifacts> results(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::vector<std::string> errors;

  const auto worker = [&]() {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= cfg.seeds.size()) return;
      const std::uint64_t seed = cfg.seeds[idx];
      try {
        RunArtifacts art;
        art.seed = seed;
        art.trace = run(problem, make_run_options(cfg, problem, seed));
        if (out_dir) {
          const std::string stem = cfg.name + "__seed" + std::to_string(seed);
          nlohmann::json summary = summarize_trace(cfg, art.trace, seed);
          if (!echo.empty()) summary["config"] = echo;
          if (trace_format == "json") {
            nlohmann::json rows = nlohmann::json::array();
            for (const TraceRecord& rec : art.trace.records)
              rows.push_back({{"k", rec.k},
                              {"epoch", rec.epoch},
                              {"batch_size", rec.batch_size},
                              {"lr", rec.lr},
                              {"train_loss", rec.train_loss},
                              {"test_metric", rec.test_metric},
                              {"grad_comps_opt", rec.grad_comps_opt},
                              {"grad_comps_eval", rec.grad_comps_eval}});
            summary["trace"] = std::move(rows);
          } else {
            art.trace_path = *out_dir / (stem + ".csv");
            write_trace_csv(art.trace_path, art.trace);
          }
          art.summary_path = *out_dir / (stem + ".json");
          detail::write_atomic(art.summary_path, summary.dump(2) + "\n");
        }
        results[idx] = std::move(art);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        errors.push_back("seed " + std::to_string(seed) + ": " + e.what());
      }
    }
  };

  const int pool = std::max(1, std::min<int>(jobs, static_cast<int>(cfg.seeds.size())));
  if (pool == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < pool; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  if (!errors.empty()) throw std::runtime_error(errors.front());
  return results;
}

// Per-seed final-state table plus mean / median aggregate rows.
inline std::string experiment_summary_csv(const std::vector<RunArtifacts>& runs) {
  std::ostringstream out;
  out << "seed,status,updates,epochs,train_loss,test_metric,grad_comps_opt,grad_comps_eval\n";
  std::vector<double> epochs, updates, losses, metrics;
  for (const RunArtifacts& art : runs) {
    const TraceRecord& last = art.trace.final_record();
    out << art.seed << ',' << to_string(art.trace.status) << ',' << last.k << ','
        << detail::fmt_double(last.epoch) << ',' << detail::fmt_double(last.train_loss)
        << ',' << detail::fmt_double(last.test_metric) << ',' << last.grad_comps_opt << ','
        << last.grad_comps_eval << "\n";
    epochs.push_back(last.epoch);
    updates.push_back(static_cast<double>(last.k));
    losses.push_back(last.train_loss);
    metrics.push_back(last.test_metric);
  }
  const auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  if (!runs.empty()) {
    out << "mean,," << detail::fmt_double(mean(updates)) << ','
        << detail::fmt_double(mean(epochs)) << ',' << detail::fmt_double(mean(losses)) << ','
        << detail::fmt_double(mean(metrics)) << ",,\n";
    out << "median,," << detail::fmt_double(detail::quantile(updates, 0.5)) << ','
        << detail::fmt_double(detail::quantile(epochs, 0.5)) << ','
        << detail::fmt_double(detail::quantile(losses, 0.5)) << ','
        << detail::fmt_double(detail::quantile(metrics, 0.5)) << ",,\n";
  }
  return out.str();
}

// Diagnostics pass: replay the configured run deterministically and emit one
// row per recorded iterate. Bound columns need the analytic constants and are
// NaN (never counted as violations) when the problem does not provide them.
inline std::vector<DiagnosticsRow> diagnose_run(const ExperimentConfig& cfg,
                                                std::uint64_t seed) {
  const ProblemInstance problem = build_problem(cfg.problem);
  RunOptions opts = make_run_options(cfg, problem, seed);

  std::optional<ProblemConstants> constants;
  if (problem.kind == ProblemKind::LeastSquares) constants = quadratic_constants(problem);
  const double f_star = constants ? constants->f_star : opts.policy.f_star;

  struct Snapshot {
    Count k;
    double m_sq, grad_norm_sq, loss, dist_sq;
  };
  std::vector<Snapshot> snaps;
  opts.observer = [&](const TraceRecord& rec, const Weights& w) {
    Snapshot s;
    s.k = rec.k;
    s.m_sq = m_squared(problem, w);
    s.grad_norm_sq = grad_full(problem, w).squaredNorm();
    s.loss = loss_full(problem, w);
    s.dist_sq = constants ? (w - constants->w_star).squaredNorm()
                          : std::numeric_limits<double>::quiet_NaN();
    snaps.push_back(s);
  };
  const RunTrace trace = run(problem, opts);

  // trajectory extremes of M^2 over the recorded iterates
  double m_l_sq = std::numeric_limits<double>::infinity();
  double m_u_sq = 0.0;
  for (const Snapshot& s : snaps) {
    m_l_sq = std::min(m_l_sq, s.m_sq);
    m_u_sq = std::max(m_u_sq, s.m_sq);
  }

  std::vector<DiagnosticsRow> rows;
  for (std::size_t i = 0; i < snaps.size(); ++i) {
    const Snapshot& s = snaps[i];
    const TraceRecord& rec = trace.records[i];
    DiagnosticsRow row;
    row.k = s.k;
    row.m_sq = s.m_sq;
    row.grad_norm_sq = s.grad_norm_sq;
    row.stationary = s.grad_norm_sq < 1e-20;  // ||grad|| < 1e-10
    row.diversity = row.stationary
                        ? std::numeric_limits<double>::quiet_NaN()
                        : s.m_sq / (static_cast<double>(problem.n_train()) * s.grad_norm_sq);
    if (constants && constants->alpha > 0.0) {
      ProblemConstants cs = *constants;
      cs.m_l_sq = m_l_sq;
      cs.m_u_sq = m_u_sq;
      const double gap = std::max(s.loss - f_star, 0.0);
      if (!row.stationary && s.dist_sq > 0.0 && gap > 0.0) {
        const DiversityBounds b =
            diversity_bounds(cs, problem.n_train(), s.dist_sq, gap);
        row.lower_bound = b.lower;
        row.upper_bound_sc = b.upper_sc;
        row.upper_bound_pl = b.upper_pl;
        if (row.diversity < row.lower_bound * (1.0 - 1e-9)) ++row.violations;
        if (row.diversity > row.upper_bound_sc * (1.0 + 1e-9)) ++row.violations;
        if (row.diversity > row.upper_bound_pl * (1.0 + 1e-9)) ++row.violations;
      } else {
        row.lower_bound = row.upper_bound_sc = row.upper_bound_pl =
            std::numeric_limits<double>::quiet_NaN();
      }
    } else {
      row.lower_bound = row.upper_bound_sc = row.upper_bound_pl =
          std::numeric_limits<double>::quiet_NaN();
    }
    row.var_closed = rec.batch_size >= 1
                         ? std::max(0.0, (s.m_sq - s.grad_norm_sq) /
                                             static_cast<double>(rec.batch_size))
                         : std::numeric_limits<double>::quiet_NaN();
    row.var_bound = std::isfinite(f_star) && m_u_sq > 0.0 && trace.c_used > 0.0
                        ? adaptive_variance_bound(std::max(s.loss - f_star, 0.0), m_u_sq, trace.c_used)
                        : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace adabatch

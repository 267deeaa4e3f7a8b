#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "adabatch/problem.hpp"
#include "adabatch/rng.hpp"
#include "adabatch/schedules.hpp"

namespace adabatch {

// Mutable optimizer state. `k` counts model updates and increments by
// exactly one per update.
struct OptimizerState {
  Weights weights;
  Weights velocity;     // momentum buffer
  Weights accumulator;  // Adagrad squared-gradient sum, entrywise >= 0
  Weights average;      // ASGD running mean of post-update iterates
  Count average_count = 0;
  Count k = 0;
};

// Plain / momentum / Nesterov step. Weight decay normally lives in the
// problem's objective; passing a nonzero decay here when the problem already
// carries one double-counts it and is rejected.
inline void sgd_step(OptimizerState& state, const Weights& grad, double gamma_eff,
                     double momentum = 0.0, bool nesterov = false,
                     double weight_decay = 0.0, double problem_decay = 0.0) {
  if (gamma_eff <= 0.0) throw ConfigError("sgd_step: step size must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("sgd_step: momentum must be in [0, 1)");
  if (weight_decay != 0.0 && problem_decay != 0.0)
    throw ConfigError("sgd_step: weight decay is already part of the objective");

  if (weight_decay == 0.0 && momentum == 0.0) {
    state.weights -= gamma_eff * grad;
    ++state.k;
    return;
  }
  Weights g = grad;
  if (weight_decay != 0.0) g += weight_decay * state.weights;
  if (momentum != 0.0) {
    if (state.velocity.size() != g.size()) state.velocity = Weights::Zero(g.size());
    state.velocity = momentum * state.velocity + g;
    state.weights -= gamma_eff * (nesterov ? (g + momentum * state.velocity).eval()
                                           : state.velocity);
  } else {
    state.weights -= gamma_eff * g;
  }
  ++state.k;
}

// Adagrad: a += g.^2; w -= gamma * g ./ (sqrt(a) + eps). eps may be zero;
// coordinates with zero accumulated curvature and zero gradient stay put.
inline void adagrad_step(OptimizerState& state, const Weights& grad, double gamma,
                         double eps = 1e-10) {
  if (gamma <= 0.0) throw ConfigError("adagrad_step: step size must be positive");
  if (eps < 0.0) throw ConfigError("adagrad_step: eps must be >= 0");
  if (state.accumulator.size() != grad.size())
    state.accumulator = Weights::Zero(grad.size());
  state.accumulator += grad.cwiseProduct(grad);
  for (Eigen::Index j = 0; j < grad.size(); ++j) {
    const double denom = std::sqrt(state.accumulator[j]) + eps;
    if (denom > 0.0) state.weights[j] -= gamma * grad[j] / denom;
  }
  ++state.k;
}

// Running mean of post-update iterates once k reaches t0; before that the
// average mirrors the current iterate. Optimization always continues on the
// raw weights.
inline void asgd_update_average(OptimizerState& state, Count t0) {
  if (t0 < 0) throw ConfigError("asgd_update_average: t0 must be >= 0");
  if (state.k <= t0) {
    state.average = state.weights;
    state.average_count = state.k < t0 ? 0 : 1;
    return;
  }
  if (state.average.size() != state.weights.size() || state.average_count == 0) {
    state.average = state.weights;
    state.average_count = 1;
    return;
  }
  ++state.average_count;
  state.average += (state.weights - state.average) / static_cast<double>(state.average_count);
}

enum class SamplingMode { WithReplacement, ShufflePerEpoch };

inline const char* to_string(SamplingMode m) {
  return m == SamplingMode::WithReplacement ? "with_replacement" : "shuffle_per_epoch";
}

// Minibatch index source. ShufflePerEpoch reshuffles a permutation each time
// it is exhausted, so every index is visited once per epoch boundary when
// the batch size divides n.
class MinibatchSampler {
 public:
  MinibatchSampler(Count n, SamplingMode mode, std::uint64_t seed)
      : n_(n), mode_(mode), rng_(seed) {}

  std::vector<Eigen::Index> draw(Count batch) {
    std::vector<Eigen::Index> out(static_cast<std::size_t>(batch));
    if (mode_ == SamplingMode::WithReplacement) {
      for (auto& idx : out) idx = rng_.uniform_int(0, n_ - 1);
      return out;
    }
    for (auto& idx : out) {
      if (cursor_ >= static_cast<Count>(perm_.size())) refill();
      idx = perm_[static_cast<std::size_t>(cursor_++)];
    }
    return out;
  }

 private:
  void refill() {
    if (perm_.empty()) {
      perm_.resize(static_cast<std::size_t>(n_));
      for (Count i = 0; i < n_; ++i) perm_[static_cast<std::size_t>(i)] = i;
    }
    rng_.shuffle(perm_);
    cursor_ = 0;
  }

  Count n_;
  SamplingMode mode_;
  Rng rng_;
  std::vector<Eigen::Index> perm_;
  Count cursor_ = std::numeric_limits<Count>::max();
};

enum class ThresholdKind { TrainLossBelow, TestMetricAtLeast, TestMetricAtMost };

struct Threshold {
  ThresholdKind kind = ThresholdKind::TrainLossBelow;
  double value = 0.0;

  bool satisfied(double train_loss, double test_metric) const {
    switch (kind) {
      case ThresholdKind::TrainLossBelow: return train_loss <= value;
      case ThresholdKind::TestMetricAtLeast: return test_metric >= value;
      case ThresholdKind::TestMetricAtMost: return test_metric <= value;
    }
    return false;
  }
};

// Run bounds; at least one must be set.
struct StoppingRule {
  Count max_updates = 0;       // 0 = unbounded
  double max_epochs = 0.0;     // 0 = unbounded
  std::optional<Threshold> target;
  double grad_norm_floor = 0.0;  // stop when the scheduling gradient norm^2 falls below

  bool any() const {
    return max_updates > 0 || max_epochs > 0.0 || target.has_value() || grad_norm_floor > 0.0;
  }
};

enum class RunStatus {
  TargetReached,
  MaxUpdates,
  MaxEpochs,
  Converged,  // scheduling gradient vanished
  Diverged,
};

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::TargetReached: return "target_reached";
    case RunStatus::MaxUpdates: return "max_updates";
    case RunStatus::MaxEpochs: return "max_epochs";
    case RunStatus::Converged: return "converged";
    case RunStatus::Diverged: return "diverged";
  }
  return "?";
}

struct TraceRecord {
  Count k = 0;
  double epoch = 0.0;       // grad_comps_opt / n_train
  Count batch_size = 0;     // effective batch used in update k (0 on the k=0 row)
  double lr = 0.0;          // effective step size used in update k
  double train_loss = 0.0;
  double test_metric = 0.0;
  Count grad_comps_opt = 0;   // cumulative sum of effective batch sizes
  Count grad_comps_eval = 0;  // cumulative scheduling-evaluation computations
  double m_sq = std::numeric_limits<double>::quiet_NaN();  // M^2(w_k) when tracked
};

struct RunTrace {
  std::vector<TraceRecord> records;
  RunStatus status = RunStatus::MaxUpdates;
  SamplingMode sampling = SamplingMode::WithReplacement;
  std::uint64_t seed = 0;
  Count crossover_k = -1;  // first update where the batch cap converted growth to lr decay
  double f_star_used = std::numeric_limits<double>::quiet_NaN();
  double c_used = std::numeric_limits<double>::quiet_NaN();
  double gamma0_used = std::numeric_limits<double>::quiet_NaN();
  std::string m_sq_source;  // "w0-estimate" | "override" | ""

  const TraceRecord& final_record() const { return records.back(); }
};

struct OptimizerFlags {
  double momentum = 0.0;
  bool nesterov = false;
  bool adagrad = false;
  double adagrad_eps = 1e-10;
  Count asgd_t0 = -1;        // -1 disables iterate averaging
  double weight_decay = 0.0; // must be 0 when the problem carries decay
};

struct RunOptions {
  SchedulePolicy policy;
  LrRule lr;
  OptimizerFlags optimizer;
  StoppingRule stop;
  SamplingMode sampling = SamplingMode::WithReplacement;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = 12345;  // weight init; fixed across sampling seeds by default
  Count eval_every = 1;             // cadence of trace records / metric evaluations
  bool track_m_squared = false;
  double divergence_factor = 1e6;
  std::optional<Weights> w0;        // overrides init_weights
  // prescribed step size inputs; NaN means "estimate from the problem"
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();
  double m_sq_override = std::numeric_limits<double>::quiet_NaN();
  // observer invoked at every recorded row with the current (raw) weights
  std::function<void(const TraceRecord&, const Weights&)> observer;
};

namespace detail {

inline double m_squared_inline(const ProblemInstance& p, const Weights& w) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.n_train(); ++i)
    total += grad_example(p, w, i).squaredNorm();
  return total / static_cast<double>(p.n_train());
}

}  // namespace detail

// The mini-batch SGD loop with a pluggable batch-size schedule.
//
// Per update: (re)schedule the batch on its cadence -> cap_and_decay ->
// sample indices -> minibatch gradient -> optimizer step -> record. The
// requested (uncapped) batch size persists between re-evaluations, so the
// cap always sees the raw request and the noise scale gamma/B is identical
// with and without a cap. B == n executes as a deterministic full-batch
// step, which makes gradient descent the Constant-policy special case.
//
// Accounting: grad_comps_opt accumulates effective batch sizes exactly;
// grad_comps_eval accumulates n per scheduling evaluation of the full loss
// or gradient. Reporting-only metric evaluations are never counted.
inline RunTrace run(const ProblemInstance& p, const RunOptions& opts) {
  if (!opts.stop.any()) throw ConfigError("run: stopping rule is empty");
  if (opts.optimizer.weight_decay != 0.0 && p.weight_decay != 0.0)
    throw ConfigError("run: weight decay is set on both the problem and the optimizer");
  if (opts.policy.b0 < 1) throw ConfigError("run: b0 must be >= 1");
  if (opts.policy.b_max > 0 && opts.policy.b_max < opts.policy.b0)
    throw ConfigError("run: b_max must be >= b0");

  const Count n = p.n_train();
  const SchedulePolicy& policy = opts.policy;

  OptimizerState state;
  state.weights = opts.w0 ? *opts.w0 : init_weights(p, opts.init_seed);
  detail::check_weights(p, state.weights);

  RunTrace trace;
  trace.sampling = opts.sampling;
  trace.seed = opts.seed;

  Count grad_comps_opt = 0;
  Count grad_comps_eval = 0;
  double requested_examples = 0.0;  // drives the Geometric damping counter

  // the sentinel for "schedule asked for an unbounded batch"
  const Count sentinel = policy.b_max > 0 ? policy.b_max : n;

  // resolve c (derived from B0 and the initial gap when not supplied)
  double c = policy.c;
  double loss0;
  if (policy.kind == ScheduleKind::AdaLoss) {
    loss0 = loss_full(p, state.weights);
    grad_comps_eval += n;  // scheduling evaluation
    if (c <= 0.0) {
      const double gap0 = loss0 - policy.f_star;
      if (gap0 <= 0.0)
        throw BetterThanOptimumError("run: F(w0) <= f_star, cannot derive c");
      c = static_cast<double>(policy.b0) * gap0;
    }
  } else if (policy.kind == ScheduleKind::AdaGradNorm) {
    loss0 = loss_full(p, state.weights);
    if (c <= 0.0) {
      const Weights g0 = grad_full(p, state.weights);
      grad_comps_eval += n;
      c = static_cast<double>(policy.b0) * g0.squaredNorm();
      if (c <= 0.0) throw ConfigError("run: zero initial gradient, cannot derive c");
    }
  } else {
    loss0 = loss_full(p, state.weights);
  }
  trace.c_used = c;
  trace.f_star_used = policy.f_star;

  // resolve the base step size
  LrRule lr = opts.lr;
  if (lr.kind == LrKind::Prescribed) {
    double m_sq;
    if (std::isfinite(opts.m_sq_override)) {
      m_sq = opts.m_sq_override;
      trace.m_sq_source = "override";
    } else {
      m_sq = detail::m_squared_inline(p, state.weights);
      grad_comps_eval += n;
      trace.m_sq_source = "w0-estimate";
    }
    lr.gamma0 = prescribed_step_size(lr.fn_class, opts.alpha, opts.beta, c, m_sq, m_sq);
  }
  trace.gamma0_used = lr.gamma0;

  MinibatchSampler sampler(n, opts.sampling, opts.seed);
  Count b_request = policy.b0;
  Count hsgd_cross = -1;  // update index where HSGD-1 first exceeded the cap

  const auto record_row = [&](Count k, Count batch, double gamma) {
    TraceRecord rec;
    rec.k = k;
    rec.batch_size = batch;
    rec.lr = gamma;
    rec.grad_comps_opt = grad_comps_opt;
    rec.grad_comps_eval = grad_comps_eval;
    rec.epoch = static_cast<double>(grad_comps_opt) / static_cast<double>(n);
    const Weights& report_w =
        (opts.optimizer.asgd_t0 >= 0 && state.average.size() == state.weights.size())
            ? state.average
            : state.weights;
    rec.train_loss = k == 0 ? loss0 : detail::mean_data_loss(p, report_w, p.data.x_train,
                                                             p.data.y_train, p.data.labels_train) +
                                          detail::ridge_term(p, report_w);
    rec.test_metric = p.data.n_test() > 0 ? test_metric(p, report_w)
                                          : std::numeric_limits<double>::quiet_NaN();
    if (opts.track_m_squared) rec.m_sq = detail::m_squared_inline(p, state.weights);
    trace.records.push_back(rec);
    if (opts.observer) opts.observer(rec, state.weights);
    return rec;
  };

  record_row(0, 0, lr.gamma0);
  const double initial_loss = loss0;

  const Count eval_every = std::max<Count>(1, opts.eval_every);
  for (Count k = 0;; ++k) {
    // 1. schedule the batch request on the policy's cadence
    switch (policy.kind) {
      case ScheduleKind::AdaLoss:
        if (k % std::max<Count>(1, policy.d_relax) == 0) {
          const double cur = k == 0 ? loss0 : loss_full(p, state.weights);
          if (k > 0) grad_comps_eval += n;
          b_request = adadamp_batch(cur, policy.f_star, c, sentinel);
        }
        break;
      case ScheduleKind::AdaGradNorm:
        if (k % std::max<Count>(1, policy.d_relax) == 0) {
          const Weights g = grad_full(p, state.weights);
          grad_comps_eval += n;
          const double gn2 = g.squaredNorm();
          if (gn2 <= std::max(opts.stop.grad_norm_floor, 0.0)) {
            trace.status = RunStatus::Converged;
            record_row(k, 0, lr_at(lr, k));
            return trace;
          }
          b_request = gradnorm_batch(gn2, c, sentinel);
        }
        break;
      case ScheduleKind::PadaLinear:
        if (k % std::max<Count>(1, policy.dwell) == 0)
          b_request = padadamp_batch(policy.b0, policy.m, k);
        break;
      case ScheduleKind::PadaWarmup:
        if (k % std::max<Count>(1, policy.dwell) == 0)
          b_request = padadamp_warmup_batch(policy.b0, policy.m, k, policy.tau);
        break;
      case ScheduleKind::HsgdQuadratic:
        if (k % std::max<Count>(1, policy.dwell) == 0)
          b_request = hsgd_batch(policy.b0, policy.m, k);
        break;
      case ScheduleKind::Geometric:
        b_request = geodamp_batch(policy.b0, policy.factor, policy.delay_epochs,
                                  requested_examples / static_cast<double>(n));
        break;
      case ScheduleKind::Constant:
        b_request = policy.b0;
        break;
      case ScheduleKind::Scripted:
        if (k >= static_cast<Count>(policy.scripted.size())) {
          trace.status = RunStatus::MaxUpdates;
          return trace;
        }
        b_request = policy.scripted[static_cast<std::size_t>(k)];
        break;
    }

    // HSGD-1 continues the post-cap decay driver linearly so the effective
    // step size decays like 1/k instead of 1/k^2
    Count decay_driver = b_request;
    if (policy.kind == ScheduleKind::HsgdQuadratic && policy.hsgd_variant == 1 &&
        policy.b_max > 0 && b_request > policy.b_max) {
      if (hsgd_cross < 0) hsgd_cross = k;
      const double k_max = static_cast<double>(hsgd_cross);
      decay_driver = std::max<Count>(
          policy.b_max,
          detail::tolerant_ceil(static_cast<double>(policy.b_max) *
                                (k_max + policy.m * (static_cast<double>(k) - k_max)) /
                                std::max(1.0, k_max)));
    }

    // 2/3. learning rate, cap, clamp to n (a scripted sequence is taken
    // literally; with-replacement sampling admits B > n)
    const double epoch_now = static_cast<double>(grad_comps_opt) / static_cast<double>(n);
    const double gamma_base = lr_at(lr, k, epoch_now);
    double gamma_eff = gamma_base;
    Count b_eff = b_request;
    const bool clamp_to_n = policy.kind != ScheduleKind::Scripted;
    if (policy.b_max > 0) {
      const CapResult cap = cap_and_decay(gamma_base, decay_driver, policy.b_max);
      gamma_eff = cap.gamma_eff;
      b_eff = clamp_to_n ? std::min(cap.b_eff, n) : cap.b_eff;
      if (cap.capped && trace.crossover_k < 0) trace.crossover_k = k;
    } else if (clamp_to_n) {
      b_eff = std::min(b_request, n);
    }
    b_eff = std::max<Count>(1, b_eff);

    // 4. sample (a full batch is the deterministic index set)
    Weights grad;
    if (b_eff == n) {
      grad = grad_full(p, state.weights);
    } else {
      const std::vector<Eigen::Index> indices = sampler.draw(b_eff);
      grad = grad_minibatch(p, state.weights, indices);
    }
    grad_comps_opt += b_eff;
    requested_examples += static_cast<double>(b_request);

    // 5. optimizer step
    if (opts.optimizer.adagrad) {
      adagrad_step(state, grad, gamma_eff, opts.optimizer.adagrad_eps);
    } else {
      sgd_step(state, grad, gamma_eff, opts.optimizer.momentum, opts.optimizer.nesterov,
               opts.optimizer.weight_decay, p.weight_decay);
    }
    if (opts.optimizer.asgd_t0 >= 0) asgd_update_average(state, opts.optimizer.asgd_t0);

    if (!state.weights.allFinite()) {
      trace.status = RunStatus::Diverged;
      return trace;  // the last finite record is already in the trace
    }

    // 6. record + stopping checks on the evaluation cadence
    const Count updates = k + 1;
    const bool hit_max_updates = opts.stop.max_updates > 0 && updates >= opts.stop.max_updates;
    const bool hit_max_epochs =
        opts.stop.max_epochs > 0.0 &&
        static_cast<double>(grad_comps_opt) / static_cast<double>(n) >= opts.stop.max_epochs;
    if (updates % eval_every == 0 || hit_max_updates || hit_max_epochs) {
      const TraceRecord rec = record_row(updates, b_eff, gamma_eff);
      if (!std::isfinite(rec.train_loss) ||
          rec.train_loss > opts.divergence_factor * std::max(1e-300, std::abs(initial_loss))) {
        trace.status = RunStatus::Diverged;
        return trace;
      }
      if (opts.stop.target && opts.stop.target->satisfied(rec.train_loss, rec.test_metric)) {
        trace.status = RunStatus::TargetReached;
        return trace;
      }
    }
    if (hit_max_updates) {
      trace.status = RunStatus::MaxUpdates;
      return trace;
    }
    if (hit_max_epochs) {
      trace.status = RunStatus::MaxEpochs;
      return trace;
    }
  }
}

// Geometric policy wrapper: past b_max, each further damping step converts
// into an equal-factor learning-rate decay (the batch cap applied to the
// geometric schedule).
// The trace marks the first converted update in crossover_k.
inline RunTrace run_geodamp_lr_mirror(const ProblemInstance& p, RunOptions opts) {
  if (opts.policy.kind != ScheduleKind::Geometric)
    throw ConfigError("run_geodamp_lr_mirror: policy must be Geometric");
  return run(p, opts);
}

}  // namespace adabatch

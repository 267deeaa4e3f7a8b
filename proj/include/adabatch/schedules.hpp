#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "adabatch/dataset.hpp"  // ConfigError

namespace adabatch {

using Count = std::int64_t;

// Raised when the training loss drops below the configured optimum by more
// than tolerance; this signals a wrong F* rather than great progress.
struct BetterThanOptimumError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Ceiling that forgives representation error: 0.01 * 10000 must ceil to 100,
// not 101. Inputs are formula values whose exact-arithmetic result is often
// an integer.
inline Count tolerant_ceil(double x) {
  const double nearest = std::nearbyint(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, std::abs(x)))
    return static_cast<Count>(nearest);
  return static_cast<Count>(std::ceil(x));
}

inline Count tolerant_floor(double x) {
  return static_cast<Count>(std::floor(x + 1e-9 * std::max(1.0, std::abs(x))));
}

}  // namespace detail

enum class ScheduleKind {
  AdaLoss,        // B_k = ceil(c / (F(w_k) - F*))
  AdaGradNorm,    // B_k = ceil(c / ||grad F(w_k)||^2)
  PadaLinear,     // B_k = B0 + ceil(m k)
  PadaWarmup,     // max{ceil(B0/4), ceil((1 - e^{-k tau}) (B0 + ceil(m k)))}
  HsgdQuadratic,  // B_k = B0 + ceil(m k^2)
  Geometric,      // B0 * factor^floor(epoch / delay)
  Constant,       // B0
  Scripted,       // explicit B sequence (testing hook, not config-reachable)
};

inline const char* to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::AdaLoss: return "AdaLoss";
    case ScheduleKind::AdaGradNorm: return "AdaGradNorm";
    case ScheduleKind::PadaLinear: return "PadaLinear";
    case ScheduleKind::PadaWarmup: return "PadaWarmup";
    case ScheduleKind::HsgdQuadratic: return "HsgdQuadratic";
    case ScheduleKind::Geometric: return "Geometric";
    case ScheduleKind::Constant: return "Constant";
    case ScheduleKind::Scripted: return "Scripted";
  }
  return "?";
}

// A batch-size rule plus its coupling to the learning rate at the cap.
// Only the fields relevant to `kind` are read.
struct SchedulePolicy {
  ScheduleKind kind = ScheduleKind::Constant;
  double c = 0.0;            // adaptive constant; <= 0 means derive at run start
  Count b0 = 1;              // initial batch size
  double m = 0.0;            // passive growth rate
  double tau = 1.0;          // warmup decay constant
  double factor = 5.0;       // geometric growth factor
  double delay_epochs = 1.0; // geometric damping delay
  Count b_max = 0;           // maximum batch size; 0 = uncapped
  Count d_relax = 1;         // model updates between adaptive re-evaluations
  double f_star = 0.0;       // optimal training loss for AdaLoss
  Count dwell = 1;           // updates between passive re-evaluations
  int hsgd_variant = 2;      // post-cap decay: 1 -> O(1/k), 2 -> O(1/k^2)
  std::vector<Count> scripted;

  bool adaptive() const {
    return kind == ScheduleKind::AdaLoss || kind == ScheduleKind::AdaGradNorm;
  }
};

// Loss-proportional batch size ceil(c / (F - F*)). Returns `sentinel` when
// the gap is within tolerance of zero or the division would exceed it;
// cap_and_decay resolves the sentinel.
inline Count adadamp_batch(double loss, double f_star, double c,
                           Count sentinel = std::numeric_limits<Count>::max() / 4) {
  if (c <= 0.0) throw ConfigError("adadamp_batch: c must be positive");
  const double tol = 1e-12 * (1.0 + std::abs(f_star));
  const double gap = loss - f_star;
  if (gap < -tol)
    throw BetterThanOptimumError(
        "training loss " + std::to_string(loss) + " is below the configured optimum " +
        std::to_string(f_star) + "; check f_star");
  if (gap <= tol || gap <= c / static_cast<double>(sentinel)) return sentinel;
  return std::min(sentinel, std::max<Count>(1, detail::tolerant_ceil(c / gap)));
}

// Gradient-norm-proportional batch size ceil(c / ||grad F||^2). A zero
// rejected here; the engine stops before calling.
inline Count gradnorm_batch(double grad_norm_sq, double c,
                            Count sentinel = std::numeric_limits<Count>::max() / 4) {
  if (c <= 0.0) throw ConfigError("gradnorm_batch: c must be positive");
  if (grad_norm_sq <= 0.0)
    throw ConfigError("gradnorm_batch: zero gradient norm (run has converged)");
  if (grad_norm_sq <= c / static_cast<double>(sentinel)) return sentinel;
  return std::min(sentinel, std::max<Count>(1, detail::tolerant_ceil(c / grad_norm_sq)));
}

// Passive linear growth, B0 + ceil(m k).
inline Count padadamp_batch(Count b0, double m, Count k) {
  if (m < 0.0) throw ConfigError("padadamp_batch: m must be >= 0");
  return b0 + detail::tolerant_ceil(m * static_cast<double>(k));
}

// Warmup variant: max{ceil(B0/4), ceil((1 - e^{-k tau}) * B_tilde_k)}.
inline Count padadamp_warmup_batch(Count b0, double m, Count k, double tau) {
  if (tau <= 0.0) throw ConfigError("padadamp_warmup_batch: tau must be positive");
  const Count plain = padadamp_batch(b0, m, k);
  const double damped = (1.0 - std::exp(-static_cast<double>(k) * tau)) *
                        static_cast<double>(plain);
  const Count floor_quarter = detail::tolerant_ceil(static_cast<double>(b0) / 4.0);
  return std::max(floor_quarter, detail::tolerant_ceil(damped));
}

// Quadratic growth, B0 + ceil(m k^2).
inline Count hsgd_batch(Count b0, double m, Count k) {
  if (m < 0.0) throw ConfigError("hsgd_batch: m must be >= 0");
  return b0 + detail::tolerant_ceil(m * static_cast<double>(k) * static_cast<double>(k));
}

// Geometric growth on an epoch schedule, rounded to the nearest integer.
inline Count geodamp_batch(Count b0, double factor, double delay_epochs, double epoch) {
  if (factor <= 1.0) throw ConfigError("geodamp_batch: factor must be > 1");
  if (delay_epochs <= 0.0) throw ConfigError("geodamp_batch: delay must be >= 1 epoch");
  const Count steps = detail::tolerant_floor(epoch / delay_epochs);
  const double value = static_cast<double>(b0) *
                       std::pow(factor, static_cast<double>(steps));
  if (value >= static_cast<double>(std::numeric_limits<Count>::max() / 4))
    return std::numeric_limits<Count>::max() / 4;
  return std::max<Count>(1, static_cast<Count>(std::llround(value)));
}

// Batch cap with equal-factor learning-rate decay. gamma_eff / B_eff always
// equals gamma / B_k, so capping never changes the noise scale trajectory.
struct CapResult {
  double gamma_eff;
  Count b_eff;
  bool capped;
};

inline CapResult cap_and_decay(double gamma, Count b_k, Count b_max) {
  if (gamma <= 0.0) throw ConfigError("cap_and_decay: gamma must be positive");
  if (b_k < 1 || b_max < 1) throw ConfigError("cap_and_decay: batch sizes must be >= 1");
  if (b_k >= b_max) {
    return {gamma * static_cast<double>(b_max) / static_cast<double>(b_k), b_max,
            b_k > b_max};
  }
  return {gamma, b_k, false};
}

enum class LrKind { Constant, InverseK, GeometricDecay, Prescribed };

inline const char* to_string(LrKind k) {
  switch (k) {
    case LrKind::Constant: return "Constant";
    case LrKind::InverseK: return "InverseK";
    case LrKind::GeometricDecay: return "GeometricDecay";
    case LrKind::Prescribed: return "Prescribed";
  }
  return "?";
}

enum class FnClass { PL, Convex, Smooth };

inline const char* to_string(FnClass f) {
  switch (f) {
    case FnClass::PL: return "pl";
    case FnClass::Convex: return "convex";
    case FnClass::Smooth: return "smooth";
  }
  return "?";
}

// Learning-rate rule. InverseK supports both published 1/k forms:
// rate == 0 ->  gamma_k = min(gamma0, 10 gamma0 / k)          (k = 0 -> gamma0)
// rate  > 0 ->  gamma_k = gamma0 / (1 + rate * k)
struct LrRule {
  LrKind kind = LrKind::Constant;
  double gamma0 = 0.1;
  double rate = 0.0;          // InverseK inverse-decay rate
  double factor = 5.0;        // GeometricDecay factor
  double delay_epochs = 1.0;  // GeometricDecay delay
  FnClass fn_class = FnClass::PL;  // Prescribed
};

inline double lr_at(const LrRule& rule, Count k, double epoch = 0.0) {
  switch (rule.kind) {
    case LrKind::Constant:
    case LrKind::Prescribed:
      return rule.gamma0;
    case LrKind::InverseK:
      if (rule.rate > 0.0) return rule.gamma0 / (1.0 + rule.rate * static_cast<double>(k));
      if (k == 0) return rule.gamma0;
      return std::min(rule.gamma0, 10.0 * rule.gamma0 / static_cast<double>(k));
    case LrKind::GeometricDecay: {
      const Count steps = detail::tolerant_floor(epoch / rule.delay_epochs);
      return rule.gamma0 * std::pow(rule.factor, -static_cast<double>(steps));
    }
  }
  return rule.gamma0;
}

// Step size that the convergence analysis prescribes per function class:
//   PL      gamma = alpha / (beta (alpha + M_U^2 / 2c))
//   Convex  gamma = 1 / (beta + M_U^2 / c)
//   Smooth  gamma = c / (beta (c + M_L^2))
// All three satisfy 0 < gamma < 2 / beta.
inline double prescribed_step_size(FnClass fn_class, double alpha, double beta, double c,
                                double m_u_sq, double m_l_sq) {
  if (beta <= 0.0 || !std::isfinite(beta))
    throw ConfigError("prescribed_step_size: beta must be positive");
  if (c <= 0.0 || !std::isfinite(c))
    throw ConfigError("prescribed_step_size: c must be positive");
  switch (fn_class) {
    case FnClass::PL:
      if (alpha <= 0.0 || !std::isfinite(alpha))
        throw ConfigError("prescribed_step_size: PL class needs alpha > 0");
      if (!std::isfinite(m_u_sq) || m_u_sq < 0.0)
        throw ConfigError("prescribed_step_size: PL class needs M_U^2");
      return alpha / (beta * (alpha + m_u_sq / (2.0 * c)));
    case FnClass::Convex:
      if (!std::isfinite(m_u_sq) || m_u_sq < 0.0)
        throw ConfigError("prescribed_step_size: convex class needs M_U^2");
      return 1.0 / (beta + m_u_sq / c);
    case FnClass::Smooth:
      if (!std::isfinite(m_l_sq) || m_l_sq < 0.0)
        throw ConfigError("prescribed_step_size: smooth class needs M_L^2");
      return c / (beta * (c + m_l_sq));
  }
  return 0.0;
}

// Per-update contraction rate of the loss-adaptive schedule on an
// alpha-PL, beta-smooth objective: r = alpha^2 / (beta (alpha + M_U^2 / 2c)).
inline double pl_contraction_rate(double alpha, double beta, double c, double m_u_sq) {
  return alpha * alpha / (beta * (alpha + m_u_sq / (2.0 * c)));
}

}  // namespace adabatch

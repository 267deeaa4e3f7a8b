#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adabatch/dataset.hpp"
#include "adabatch/rng.hpp"

namespace adabatch {

using Weights = Eigen::VectorXd;

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ProblemKind { LeastSquares, LinearNet, MulticlassLogistic };

inline const char* to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::LeastSquares: return "LeastSquares";
    case ProblemKind::LinearNet: return "LinearNet";
    case ProblemKind::MulticlassLogistic: return "MulticlassLogistic";
  }
  return "?";
}

// A dataset plus a differentiable objective F(w) = (1/n) sum_i f_i(w) with
// per-example gradient access. Parameter layouts (flat vector w):
//   LeastSquares        [ w (d) ]
//   LinearNet           [ w1 (d) | W2 (d*d, row-major) | W3 (d*d, row-major) ]
//                       per-example loss (y_i - w1' W2 W3 x_i)^2
//   MulticlassLogistic  [ W (C*d, row-major) | b (C) ]
// Every objective carries an analytic ridge term (weight_decay/2)*||w||^2.
struct ProblemInstance {
  Dataset data;
  ProblemKind kind = ProblemKind::LeastSquares;
  double weight_decay = 0.0;

  Eigen::Index dim() const { return data.dim(); }
  Eigen::Index n_train() const { return data.n_train(); }

  Eigen::Index param_count() const {
    const Eigen::Index d = dim();
    switch (kind) {
      case ProblemKind::LeastSquares: return d;
      case ProblemKind::LinearNet: return d + 2 * d * d;
      case ProblemKind::MulticlassLogistic:
        return static_cast<Eigen::Index>(data.num_classes) * (d + 1);
    }
    return 0;
  }
};

inline ProblemInstance make_least_squares(Dataset data, double weight_decay = 0.0) {
  if (data.classification) throw ConfigError("LeastSquares needs regression targets");
  return ProblemInstance{std::move(data), ProblemKind::LeastSquares, weight_decay};
}

inline ProblemInstance make_linear_net(Dataset data, double weight_decay = 0.0) {
  if (data.classification) throw ConfigError("LinearNet needs regression targets");
  return ProblemInstance{std::move(data), ProblemKind::LinearNet, weight_decay};
}

inline ProblemInstance make_multiclass_logistic(Dataset data, double weight_decay = 0.0) {
  if (!data.classification) throw ConfigError("MulticlassLogistic needs class labels");
  return ProblemInstance{std::move(data), ProblemKind::MulticlassLogistic, weight_decay};
}

namespace detail {

inline void check_weights(const ProblemInstance& p, const Weights& w) {
  if (w.size() != p.param_count())
    throw ConfigError("weight vector has size " + std::to_string(w.size()) +
                      ", problem expects " + std::to_string(p.param_count()));
  for (Eigen::Index j = 0; j < w.size(); ++j)
    if (!std::isfinite(w[j]))
      throw NumericError("non-finite weight at index " + std::to_string(j));
}

// Block views into a flat LinearNet parameter vector.
struct LinearNetView {
  Eigen::Map<const Eigen::VectorXd> w1;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w2;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w3;

  LinearNetView(const Weights& w, Eigen::Index d)
      : w1(w.data(), d), w2(w.data() + d, d, d), w3(w.data() + d + d * d, d, d) {}
};

struct LinearNetMutView {
  Eigen::Map<Eigen::VectorXd> w1;
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w2;
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w3;

  LinearNetMutView(Weights& w, Eigen::Index d)
      : w1(w.data(), d), w2(w.data() + d, d, d), w3(w.data() + d + d * d, d, d) {}
};

struct MulticlassView {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> wm;
  Eigen::Map<const Eigen::VectorXd> bias;

  MulticlassView(const Weights& w, Eigen::Index c, Eigen::Index d)
      : wm(w.data(), c, d), bias(w.data() + c * d, c) {}
};

struct MulticlassMutView {
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> wm;
  Eigen::Map<Eigen::VectorXd> bias;

  MulticlassMutView(Weights& w, Eigen::Index c, Eigen::Index d)
      : wm(w.data(), c, d), bias(w.data() + c * d, c) {}
};

// row-wise softmax with max subtraction; probabilities clamped at 1e-300
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd probs(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    probs.row(i) = (e / e.sum()).max(1e-300);
  }
  return probs;
}

inline double ridge_term(const ProblemInstance& p, const Weights& w) {
  return p.weight_decay > 0.0 ? 0.5 * p.weight_decay * w.squaredNorm() : 0.0;
}

// mean data loss over a row subset given by `rows` (empty -> all rows)
inline double mean_data_loss(const ProblemInstance& p, const Weights& w,
                             const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const Eigen::VectorXi& labels) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  switch (p.kind) {
    case ProblemKind::LeastSquares:
      return (y - x * w).squaredNorm() / static_cast<double>(n);
    case ProblemKind::LinearNet: {
      LinearNetView v(w, d);
      const Eigen::VectorXd eff = v.w3.transpose() * (v.w2.transpose() * v.w1);
      return (y - x * eff).squaredNorm() / static_cast<double>(n);
    }
    case ProblemKind::MulticlassLogistic: {
      MulticlassView v(w, p.data.num_classes, d);
      Eigen::MatrixXd logits = x * v.wm.transpose();
      logits.rowwise() += v.bias.transpose();
      const Eigen::MatrixXd probs = softmax_rows(logits);
      double total = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) total -= std::log(probs(i, labels[i]));
      return total / static_cast<double>(n);
    }
  }
  return 0.0;
}

}  // namespace detail

// F(w) over the training split.
inline double loss_full(const ProblemInstance& p, const Weights& w) {
  detail::check_weights(p, w);
  return detail::mean_data_loss(p, w, p.data.x_train, p.data.y_train, p.data.labels_train) +
         detail::ridge_term(p, w);
}

// Mean data loss over the test split (no ridge term; this is the reported
// metric for regression problems).
inline double loss_test(const ProblemInstance& p, const Weights& w) {
  detail::check_weights(p, w);
  return detail::mean_data_loss(p, w, p.data.x_test, p.data.y_test, p.data.labels_test);
}

// Classification accuracy on the test split.
inline double accuracy_test(const ProblemInstance& p, const Weights& w) {
  detail::check_weights(p, w);
  const Eigen::Index d = p.dim();
  detail::MulticlassView v(w, p.data.num_classes, d);
  Eigen::MatrixXd logits = p.data.x_test * v.wm.transpose();
  logits.rowwise() += v.bias.transpose();
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index pred;
    logits.row(i).maxCoeff(&pred);
    if (pred == p.data.labels_test[i]) ++hits;
  }
  return logits.rows() > 0 ? static_cast<double>(hits) / static_cast<double>(logits.rows()) : 0.0;
}

// Reported test metric: accuracy for classification (higher is better),
// test MSE for regression (lower is better). Threshold predicates carry the
// direction, see StoppingRule.
inline double test_metric(const ProblemInstance& p, const Weights& w) {
  return p.data.classification ? accuracy_test(p, w) : loss_test(p, w);
}

// f_i(w), the per-example loss, ridge term included.
inline double loss_example(const ProblemInstance& p, const Weights& w, Eigen::Index i) {
  detail::check_weights(p, w);
  if (i < 0 || i >= p.n_train()) throw std::out_of_range("example index out of range");
  const Eigen::Index d = p.dim();
  const auto x = p.data.x_train.row(i).transpose();
  switch (p.kind) {
    case ProblemKind::LeastSquares: {
      const double e = p.data.y_train[i] - w.dot(x);
      return e * e + detail::ridge_term(p, w);
    }
    case ProblemKind::LinearNet: {
      detail::LinearNetView v(w, d);
      const double pred = v.w1.dot(v.w2 * (v.w3 * x));
      const double e = p.data.y_train[i] - pred;
      return e * e + detail::ridge_term(p, w);
    }
    case ProblemKind::MulticlassLogistic: {
      detail::MulticlassView v(w, p.data.num_classes, d);
      Eigen::VectorXd logits = v.wm * x + v.bias;
      const double m = logits.maxCoeff();
      const double lse = m + std::log((logits.array() - m).exp().sum());
      return lse - logits[p.data.labels_train[i]] + detail::ridge_term(p, w);
    }
  }
  return 0.0;
}

// Analytic gradient of f_i at w, ridge term included.
inline Weights grad_example(const ProblemInstance& p, const Weights& w, Eigen::Index i) {
  detail::check_weights(p, w);
  if (i < 0 || i >= p.n_train()) throw std::out_of_range("example index out of range");
  const Eigen::Index d = p.dim();
  const auto x = p.data.x_train.row(i).transpose();
  Weights g = Weights::Zero(w.size());
  switch (p.kind) {
    case ProblemKind::LeastSquares: {
      const double e = p.data.y_train[i] - w.dot(x);
      g = -2.0 * e * x;
      break;
    }
    case ProblemKind::LinearNet: {
      detail::LinearNetView v(w, d);
      const Eigen::VectorXd u = v.w3 * x;           // W3 x
      const Eigen::VectorXd z = v.w2.transpose() * v.w1;  // W2' w1
      const double e = p.data.y_train[i] - v.w1.dot(v.w2 * u);
      detail::LinearNetMutView gv(g, d);
      gv.w1 = -2.0 * e * (v.w2 * u);
      gv.w2 = -2.0 * e * v.w1 * u.transpose();
      gv.w3 = -2.0 * e * z * x.transpose();
      break;
    }
    case ProblemKind::MulticlassLogistic: {
      detail::MulticlassView v(w, p.data.num_classes, d);
      Eigen::VectorXd logits = v.wm * x + v.bias;
      const double m = logits.maxCoeff();
      Eigen::VectorXd probs = (logits.array() - m).exp();
      probs /= probs.sum();
      probs[p.data.labels_train[i]] -= 1.0;
      detail::MulticlassMutView gv(g, p.data.num_classes, d);
      gv.wm = probs * x.transpose();
      gv.bias = probs;
      break;
    }
  }
  if (p.weight_decay > 0.0) g += p.weight_decay * w;
  return g;
}

namespace detail {

// Vectorized mean gradient over a gathered row subset. Matches the mean of
// grad_example up to floating-point reassociation (tested at 1e-12).
inline Weights grad_rows(const ProblemInstance& p, const Weights& w,
                         const Eigen::MatrixXd& xs, const Eigen::VectorXd& ys,
                         const Eigen::VectorXi& ls) {
  const Eigen::Index b = xs.rows();
  const Eigen::Index d = xs.cols();
  const double inv_b = 1.0 / static_cast<double>(b);
  Weights g = Weights::Zero(w.size());
  switch (p.kind) {
    case ProblemKind::LeastSquares: {
      const Eigen::VectorXd e = ys - xs * w;
      g = (-2.0 * inv_b) * (xs.transpose() * e);
      break;
    }
    case ProblemKind::LinearNet: {
      LinearNetView v(w, d);
      const Eigen::VectorXd z = v.w2.transpose() * v.w1;          // W2' w1
      const Eigen::VectorXd eff = v.w3.transpose() * z;           // (w1' W2 W3)'
      const Eigen::VectorXd e = ys - xs * eff;
      const Eigen::VectorXd xe = xs.transpose() * e;               // X' e
      LinearNetMutView gv(g, d);
      gv.w1 = (-2.0 * inv_b) * (v.w2 * (v.w3 * xe));
      gv.w2 = (-2.0 * inv_b) * v.w1 * (v.w3 * xe).transpose();
      gv.w3 = (-2.0 * inv_b) * z * xe.transpose();
      break;
    }
    case ProblemKind::MulticlassLogistic: {
      MulticlassView v(w, p.data.num_classes, d);
      Eigen::MatrixXd logits = xs * v.wm.transpose();
      logits.rowwise() += v.bias.transpose();
      Eigen::MatrixXd probs = softmax_rows(logits);
      for (Eigen::Index i = 0; i < b; ++i) probs(i, ls[i]) -= 1.0;
      MulticlassMutView gv(g, p.data.num_classes, d);
      gv.wm = inv_b * (probs.transpose() * xs);
      gv.bias = inv_b * probs.colwise().sum().transpose();
      break;
    }
  }
  if (p.weight_decay > 0.0) g += p.weight_decay * w;
  return g;
}

}  // namespace detail

// Mean of grad_example over the full training split.
inline Weights grad_full(const ProblemInstance& p, const Weights& w) {
  detail::check_weights(p, w);
  return detail::grad_rows(p, w, p.data.x_train, p.data.y_train, p.data.labels_train);
}

// Mean of grad_example over an index list; duplicates allowed.
inline Weights grad_minibatch(const ProblemInstance& p, const Weights& w,
                              std::span<const Eigen::Index> indices) {
  detail::check_weights(p, w);
  if (indices.empty()) throw ConfigError("grad_minibatch: empty index list");
  for (Eigen::Index i : indices)
    if (i < 0 || i >= p.n_train()) throw std::out_of_range("minibatch index out of range");
  if (indices.size() == 1) return grad_example(p, w, indices[0]);
  if (static_cast<Eigen::Index>(indices.size()) == p.n_train()) {
    bool is_full = true;
    for (std::size_t i = 0; i < indices.size(); ++i)
      if (indices[i] != static_cast<Eigen::Index>(i)) { is_full = false; break; }
    if (is_full) return grad_full(p, w);
  }

  const Eigen::Index b = static_cast<Eigen::Index>(indices.size());
  Eigen::MatrixXd xs(b, p.dim());
  Eigen::VectorXd ys;
  Eigen::VectorXi ls;
  if (p.data.classification) ls.resize(b); else ys.resize(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    xs.row(i) = p.data.x_train.row(indices[static_cast<std::size_t>(i)]);
    if (p.data.classification)
      ls[i] = p.data.labels_train[indices[static_cast<std::size_t>(i)]];
    else
      ys[i] = p.data.y_train[indices[static_cast<std::size_t>(i)]];
  }
  return detail::grad_rows(p, w, xs, ys, ls);
}

inline Weights grad_minibatch(const ProblemInstance& p, const Weights& w,
                              const std::vector<Eigen::Index>& indices) {
  return grad_minibatch(p, w, std::span<const Eigen::Index>(indices));
}

// Initial weights: LinearNet blocks are i.i.d. normal with sd 1/sqrt(d) so
// initial predictions stay O(1); convex problems start at zero.
inline Weights init_weights(const ProblemInstance& p, std::uint64_t seed) {
  Weights w = Weights::Zero(p.param_count());
  if (p.kind == ProblemKind::LinearNet) {
    Rng rng(seed);
    const double sd = 1.0 / std::sqrt(static_cast<double>(p.dim()));
    for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = sd * rng.normal();
  }
  return w;
}

struct ErmResult {
  Weights weights;      // linear-space solution (length d)
  double train_loss = 0.0;  // problem objective of the linear fit on the train split
  double test_loss = 0.0;   // mean squared residual on the test split
  bool rank_deficient = false;
};

// Exact linear ERM fit via direct factorization. For weight_decay > 0 this
// solves the ridge system matching F, so train_loss is the exact F* of a
// LeastSquares problem; with decay 0 a rank-deficient design falls back to
// the minimum-norm solution and is flagged.
inline ErmResult erm_reference(const ProblemInstance& p) {
  if (p.kind == ProblemKind::MulticlassLogistic)
    throw ConfigError("erm_reference: linear ERM reference needs a regression problem");
  const Eigen::MatrixXd& x = p.data.x_train;
  const Eigen::VectorXd& y = p.data.y_train;
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();

  ErmResult res;
  if (p.weight_decay > 0.0) {
    // minimize (1/n)||y - Xw||^2 + (decay/2)||w||^2
    Eigen::MatrixXd h = (2.0 / static_cast<double>(n)) * (x.transpose() * x);
    h.diagonal().array() += p.weight_decay;
    res.weights = h.ldlt().solve((2.0 / static_cast<double>(n)) * (x.transpose() * y));
  } else {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
    res.weights = cod.solve(y);
    res.rank_deficient = cod.rank() < std::min(n, d);
  }

  res.train_loss = (y - x * res.weights).squaredNorm() / static_cast<double>(n) +
                   (p.weight_decay > 0.0 ? 0.5 * p.weight_decay * res.weights.squaredNorm() : 0.0);
  if (p.data.n_test() > 0)
    res.test_loss = (p.data.y_test - p.data.x_test * res.weights).squaredNorm() /
                    static_cast<double>(p.data.n_test());
  return res;
}

}  // namespace adabatch

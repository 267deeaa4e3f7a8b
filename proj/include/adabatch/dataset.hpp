#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adabatch/rng.hpp"

namespace adabatch {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// One train/test split of a supervised dataset. Rows are examples.
// Regression tasks fill y_*, classification tasks fill labels_* and
// num_classes. Ground-truth generator state (true_weights, class_means)
// is kept so tests can check against the generating distribution.
struct Dataset {
  Eigen::MatrixXd x_train;
  Eigen::MatrixXd x_test;
  Eigen::VectorXd y_train;
  Eigen::VectorXd y_test;
  Eigen::VectorXi labels_train;
  Eigen::VectorXi labels_test;
  bool classification = false;
  int num_classes = 0;
  std::uint64_t seed = 0;
  Eigen::VectorXd true_weights;  // regression generators only
  Eigen::MatrixXd class_means;   // multiclass generator only

  Eigen::Index n_train() const { return x_train.rows(); }
  Eigen::Index n_test() const { return x_test.rows(); }
  Eigen::Index dim() const { return x_train.cols(); }
};

enum class NoiseRule {
  Zero,      // y = x'w* exactly
  Unit,      // additive N(0, 1)
  DimOver100 // additive N(0, d/100)
};

inline const char* to_string(NoiseRule r) {
  switch (r) {
    case NoiseRule::Zero: return "zero";
    case NoiseRule::Unit: return "unit";
    case NoiseRule::DimOver100: return "d_over_100";
  }
  return "?";
}

// Linear regression data: x ~ N(0, I_d), w*_i ~ N(0, 1), y = x'w* + noise.
// The trailing test_fraction of generated rows forms the test split.
inline Dataset gen_linear_data(std::int64_t n, std::int64_t d, NoiseRule noise,
                               double test_fraction, std::uint64_t seed) {
  if (n < 2 || d < 1) throw ConfigError("gen_linear_data: need n >= 2 and d >= 1");
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    throw ConfigError("gen_linear_data: test_fraction must be in [0, 1)");

  Rng rng(seed);
  Eigen::VectorXd w_star(d);
  for (Eigen::Index j = 0; j < d; ++j) w_star[j] = rng.normal();

  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.normal();

  double noise_sd = 0.0;
  if (noise == NoiseRule::Unit) noise_sd = 1.0;
  if (noise == NoiseRule::DimOver100) noise_sd = std::sqrt(static_cast<double>(d) / 100.0);

  Eigen::VectorXd y = x * w_star;
  if (noise_sd > 0.0)
    for (Eigen::Index i = 0; i < n; ++i) y[i] += noise_sd * rng.normal();

  const Eigen::Index n_test = static_cast<Eigen::Index>(
      std::llround(test_fraction * static_cast<double>(n)));
  const Eigen::Index n_train = n - n_test;

  Dataset ds;
  ds.seed = seed;
  ds.true_weights = w_star;
  ds.x_train = x.topRows(n_train);
  ds.y_train = y.head(n_train);
  ds.x_test = x.bottomRows(n_test);
  ds.y_test = y.tail(n_test);
  return ds;
}

// Gaussian class-conditional clusters, x = mean_{label} + N(0, I). Class
// means sit at radius `separation` on a centered simplex inside a seeded
// random subspace when d_raw >= classes (equal pairwise distances, so the
// separation controls accuracy predictably); otherwise on random unit
// directions. Labels are balanced within +/- 1 by construction; rows are
// shuffled before the split so both splits contain every class.
// `anisotropy` > 1 rescales dimension j (means and noise together) by a
// log-spaced factor spanning that ratio. The map is invertible, so the Bayes
// accuracy is unchanged, but gradient directions become badly conditioned
// the way raw tabular features are.
inline Dataset gen_multiclass_data(std::int64_t n, std::int64_t d_raw,
                                   std::int64_t classes, double separation,
                                   std::uint64_t seed, double test_fraction = 0.0,
                                   double anisotropy = 1.0) {
  if (classes < 2) throw ConfigError("gen_multiclass_data: classes must be >= 2");
  if (n < classes || d_raw < 1)
    throw ConfigError("gen_multiclass_data: need n >= classes and d_raw >= 1");
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    throw ConfigError("gen_multiclass_data: test_fraction must be in [0, 1)");
  if (anisotropy < 1.0) throw ConfigError("gen_multiclass_data: anisotropy must be >= 1");

  Rng rng(seed);
  Eigen::MatrixXd means(classes, d_raw);
  if (d_raw >= classes) {
    Eigen::MatrixXd gauss(d_raw, classes);
    for (Eigen::Index j = 0; j < gauss.size(); ++j) gauss.data()[j] = rng.normal();
    const Eigen::MatrixXd q =
        Eigen::HouseholderQR<Eigen::MatrixXd>(gauss).householderQ() *
        Eigen::MatrixXd::Identity(d_raw, classes);
    Eigen::MatrixXd simplex = q.transpose();  // classes x d_raw, orthonormal rows
    simplex.rowwise() -= simplex.colwise().mean();
    const double radius = simplex.row(0).norm();  // sqrt(1 - 1/classes)
    means = (separation / radius) * simplex;
  } else {
    for (Eigen::Index c = 0; c < classes; ++c) {
      Eigen::VectorXd dir(d_raw);
      for (Eigen::Index j = 0; j < d_raw; ++j) dir[j] = rng.normal();
      const double norm = dir.norm();
      if (norm > 0.0) dir /= norm;
      means.row(c) = separation * dir.transpose();
    }
  }

  // class c gets n/classes examples, the first n % classes classes one extra
  std::vector<int> labels(static_cast<std::size_t>(n));
  {
    std::size_t pos = 0;
    for (std::int64_t c = 0; c < classes; ++c) {
      std::int64_t count = n / classes + (c < n % classes ? 1 : 0);
      for (std::int64_t i = 0; i < count; ++i) labels[pos++] = static_cast<int>(c);
    }
  }
  rng.shuffle(labels);

  Eigen::MatrixXd x(n, d_raw);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d_raw; ++j)
      x(i, j) = means(labels[static_cast<std::size_t>(i)], j) + rng.normal();

  if (anisotropy > 1.0) {
    for (Eigen::Index j = 0; j < d_raw; ++j) {
      const double t = d_raw > 1 ? static_cast<double>(j) / static_cast<double>(d_raw - 1)
                                 : 0.5;
      const double scale = std::pow(anisotropy, t - 0.5);
      x.col(j) *= scale;
      means.col(j) *= scale;
    }
  }

  const Eigen::Index n_test = static_cast<Eigen::Index>(
      std::llround(test_fraction * static_cast<double>(n)));
  const Eigen::Index n_train = n - n_test;

  Dataset ds;
  ds.seed = seed;
  ds.classification = true;
  ds.num_classes = static_cast<int>(classes);
  ds.class_means = means;
  ds.x_train = x.topRows(n_train);
  ds.x_test = x.bottomRows(n_test);
  ds.labels_train.resize(n_train);
  ds.labels_test.resize(n_test);
  for (Eigen::Index i = 0; i < n_train; ++i) ds.labels_train[i] = labels[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 0; i < n_test; ++i)
    ds.labels_test[i] = labels[static_cast<std::size_t>(n_train + i)];
  return ds;
}

// Degree-2 interaction expansion: original columns followed by x_a * x_b for
// a < b (no squares), then columns with a single unique value are dropped.
inline Eigen::MatrixXd polynomial_features(const Eigen::MatrixXd& features, int degree = 2) {
  if (degree != 2) throw ConfigError("polynomial_features: only degree 2 is supported");
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();

  Eigen::MatrixXd expanded(n, d + d * (d - 1) / 2);
  expanded.leftCols(d) = features;
  Eigen::Index col = d;
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = a + 1; b < d; ++b)
      expanded.col(col++) = features.col(a).cwiseProduct(features.col(b));

  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < expanded.cols(); ++j) {
    if (n == 0 || expanded.col(j).maxCoeff() != expanded.col(j).minCoeff())
      keep.push_back(j);
  }
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = expanded.col(keep[j]);
  return out;
}

// Standardize columns that look continuous (more than two distinct values)
// to zero mean / unit variance; 0/1 indicator columns pass through.
inline void standardize_continuous(Eigen::MatrixXd& x) {
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::set<double> uniq;
    for (Eigen::Index i = 0; i < x.rows() && uniq.size() <= 2; ++i) uniq.insert(x(i, j));
    if (uniq.size() <= 2) continue;
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().sum() / static_cast<double>(x.rows());
    const double sd = std::sqrt(var);
    if (sd > 0.0) x.col(j) = (x.col(j).array() - mean) / sd;
  }
}

// Headered CSV with numeric feature columns and the class label last
// (forest-cover layout). Continuous columns are standardized; rows are
// shuffled with `seed` before the split.
inline Dataset load_csv_classification(const std::string& path, double test_fraction,
                                       std::uint64_t seed, bool interactions = false) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open CSV file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty CSV file: " + path);

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ConfigError("ragged CSV row in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().size() < 2)
    throw ConfigError("CSV must have at least one feature column and a label column");

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index d = static_cast<Eigen::Index>(rows.front().size()) - 1;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);

  Eigen::MatrixXd x(n, d);
  Eigen::VectorXi labels(n);
  int max_label = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = row[static_cast<std::size_t>(j)];
    const int label = static_cast<int>(std::llround(row.back()));
    if (label < 0) throw ConfigError("negative class label in " + path);
    labels[i] = label;
    max_label = std::max(max_label, label);
  }

  standardize_continuous(x);
  if (interactions) x = polynomial_features(x, 2);

  const Eigen::Index n_test = static_cast<Eigen::Index>(
      std::llround(test_fraction * static_cast<double>(n)));
  const Eigen::Index n_train = n - n_test;

  Dataset ds;
  ds.seed = seed;
  ds.classification = true;
  ds.num_classes = max_label + 1;
  ds.x_train = x.topRows(n_train);
  ds.x_test = x.bottomRows(n_test);
  ds.labels_train = labels.head(n_train);
  ds.labels_test = labels.tail(n_test);
  return ds;
}

}  // namespace adabatch

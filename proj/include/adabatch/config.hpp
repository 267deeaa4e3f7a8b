#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "adabatch/dataset.hpp"
#include "adabatch/engine.hpp"
#include "adabatch/schedules.hpp"

namespace adabatch {

// Flat typed key-value document: [table] sections, `key = value` lines,
// values are strings, booleans, numbers or arrays of those, `#` comments.
// This is the TOML subset the experiment configs use.
class KvDocument {
 public:
  using Value = std::variant<std::string, bool, double, std::vector<std::string>,
                             std::vector<double>>;

  static KvDocument parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
  }

  static KvDocument parse(const std::string& text, const std::string& origin = "<string>") {
    KvDocument doc;
    std::istringstream in(text);
    std::string line, table;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string stripped = strip_comment(line);
      const std::string trimmed = trim(stripped);
      if (trimmed.empty()) continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']')
          throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed table header");
        table = trim(trimmed.substr(1, trimmed.size() - 2));
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty() || value.empty())
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key or value");
      doc.values_[table.empty() ? key : table + "." + key] = parse_value(value, origin, line_no);
    }
    return doc;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [key, _] : values_)
      if (key.rfind(prefix, 0) == 0) out.push_back(key);
    return out;
  }

  std::string get_string(const std::string& key) const {
    const Value& v = fetch(key);
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    throw ConfigError("config key '" + key + "' is not a string");
  }

  bool get_bool(const std::string& key) const {
    const Value& v = fetch(key);
    if (const auto* b = std::get_if<bool>(&v)) return *b;
    throw ConfigError("config key '" + key + "' is not a boolean");
  }

  double get_number(const std::string& key) const {
    const Value& v = fetch(key);
    if (const auto* d = std::get_if<double>(&v)) return *d;
    throw ConfigError("config key '" + key + "' is not a number");
  }

  std::int64_t get_int(const std::string& key) const {
    const double d = get_number(key);
    const auto i = static_cast<std::int64_t>(std::llround(d));
    if (static_cast<double>(i) != d)
      throw ConfigError("config key '" + key + "' is not an integer");
    return i;
  }

  std::vector<double> get_number_list(const std::string& key) const {
    const Value& v = fetch(key);
    if (const auto* l = std::get_if<std::vector<double>>(&v)) return *l;
    if (const auto* d = std::get_if<double>(&v)) return {*d};
    throw ConfigError("config key '" + key + "' is not a number array");
  }

  std::vector<std::string> get_string_list(const std::string& key) const {
    const Value& v = fetch(key);
    if (const auto* l = std::get_if<std::vector<std::string>>(&v)) return *l;
    if (const auto* s = std::get_if<std::string>(&v)) return {*s};
    throw ConfigError("config key '" + key + "' is not a string array");
  }

  std::string get_string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }
  double get_number_or(const std::string& key, double fallback) const {
    return has(key) ? get_number(key) : fallback;
  }
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
  }
  bool get_bool_or(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
  }

  void set(const std::string& key, Value value) { values_[key] = std::move(value); }
  const std::map<std::string, Value>& values() const { return values_; }

 private:
  const Value& fetch(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
  }

  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

  static std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
  }

  static Value parse_scalar(const std::string& raw, const std::string& origin, int line_no) {
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"')
      return raw.substr(1, raw.size() - 2);
    if (raw == "true") return true;
    if (raw == "false") return false;
    try {
      std::size_t used = 0;
      const double d = std::stod(raw, &used);
      if (used == raw.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(origin + ":" + std::to_string(line_no) + ": cannot parse value '" +
                      raw + "' (strings need quotes)");
  }

  static Value parse_value(const std::string& raw, const std::string& origin, int line_no) {
    if (raw.front() != '[') return parse_scalar(raw, origin, line_no);
    if (raw.back() != ']')
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": unterminated array");
    std::vector<std::string> items;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
      const char ch = raw[i];
      if (ch == '"') quoted = !quoted;
      if (ch == ',' && !quoted) {
        items.push_back(trim(cur));
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!trim(cur).empty()) items.push_back(trim(cur));
    if (items.empty()) return std::vector<double>{};

    bool all_numbers = true;
    for (const auto& item : items)
      if (std::holds_alternative<std::string>(parse_scalar(item, origin, line_no)))
        all_numbers = false;
    if (all_numbers) {
      std::vector<double> out;
      for (const auto& item : items)
        out.push_back(std::get<double>(parse_scalar(item, origin, line_no)));
      return out;
    }
    std::vector<std::string> out;
    for (const auto& item : items) {
      Value v = parse_scalar(item, origin, line_no);
      if (const auto* s = std::get_if<std::string>(&v))
        out.push_back(*s);
      else
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": mixed array types");
    }
    return out;
  }

  std::map<std::string, Value> values_;
};

enum class FStarSource { Explicit, Zero, Erm };

struct ProblemSpec {
  ProblemKind kind = ProblemKind::LeastSquares;
  std::int64_t n = 0;
  std::int64_t d = 0;
  std::int64_t classes = 0;
  double separation = 2.0;
  double anisotropy = 1.0;
  NoiseRule noise = NoiseRule::DimOver100;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  bool interactions = false;
  std::string csv_path;  // optional external dataset
  double weight_decay = 0.0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ProblemSpec problem;
  SchedulePolicy schedule;
  LrRule lr;
  OptimizerFlags optimizer;
  StoppingRule stop;
  SamplingMode sampling = SamplingMode::WithReplacement;
  FStarSource f_star_source = FStarSource::Zero;
  double f_star_explicit = 0.0;
  std::vector<std::uint64_t> seeds = {0};
  std::uint64_t init_seed = 12345;
  Count eval_every = 1;
  bool track_m_squared = false;
  std::string out_dir;
  // prescribed step-size constants; NaN = derive from the problem
  double prescribed_alpha = std::numeric_limits<double>::quiet_NaN();
  double prescribed_beta = std::numeric_limits<double>::quiet_NaN();
  double prescribed_m_sq = std::numeric_limits<double>::quiet_NaN();
  // > 0: stop when the test loss reaches factor * (linear ERM test loss)
  double erm_target_factor = 0.0;
};

namespace detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline ProblemKind parse_problem_kind(const std::string& s) {
  const std::string k = lower(s);
  if (k == "leastsquares" || k == "least_squares") return ProblemKind::LeastSquares;
  if (k == "linearnet" || k == "linear_net") return ProblemKind::LinearNet;
  if (k == "multiclasslogistic" || k == "multiclass_logistic" || k == "multiclass")
    return ProblemKind::MulticlassLogistic;
  throw ConfigError("unknown problem kind '" + s + "'");
}

inline ScheduleKind parse_schedule_kind(const std::string& s) {
  const std::string k = lower(s);
  if (k == "adaloss" || k == "adadamp") return ScheduleKind::AdaLoss;
  if (k == "adagradnorm" || k == "ada_grad_norm") return ScheduleKind::AdaGradNorm;
  if (k == "padalinear" || k == "padadamp") return ScheduleKind::PadaLinear;
  if (k == "padawarmup" || k == "pada_warmup") return ScheduleKind::PadaWarmup;
  if (k == "hsgdquadratic" || k == "hsgd") return ScheduleKind::HsgdQuadratic;
  if (k == "geometric" || k == "geodamp") return ScheduleKind::Geometric;
  if (k == "constant") return ScheduleKind::Constant;
  throw ConfigError("unknown schedule kind '" + s + "'");
}

inline LrKind parse_lr_kind(const std::string& s) {
  const std::string k = lower(s);
  if (k == "constant") return LrKind::Constant;
  if (k == "inversek" || k == "inverse_k") return LrKind::InverseK;
  if (k == "geometricdecay" || k == "geometric_decay") return LrKind::GeometricDecay;
  if (k == "prescribed") return LrKind::Prescribed;
  throw ConfigError("unknown lr kind '" + s + "'");
}

inline FnClass parse_fn_class(const std::string& s) {
  const std::string k = lower(s);
  if (k == "pl") return FnClass::PL;
  if (k == "convex") return FnClass::Convex;
  if (k == "smooth") return FnClass::Smooth;
  throw ConfigError("unknown function class '" + s + "'");
}

inline NoiseRule parse_noise_rule(const std::string& s) {
  const std::string k = lower(s);
  if (k == "zero" || k == "none") return NoiseRule::Zero;
  if (k == "unit") return NoiseRule::Unit;
  if (k == "d_over_100" || k == "paper" || k == "dim_over_100") return NoiseRule::DimOver100;
  throw ConfigError("unknown noise rule '" + s + "'");
}

}  // namespace detail

// Build an ExperimentConfig from a parsed document, validating cross-field
// requirements (schedule/problem compatibility, F* source, cap ordering).
inline ExperimentConfig experiment_from_document(const KvDocument& doc) {
  ExperimentConfig cfg;
  cfg.name = doc.get_string_or("run.name", "experiment");

  // problem
  cfg.problem.kind = detail::parse_problem_kind(doc.get_string("problem.kind"));
  cfg.problem.csv_path = doc.get_string_or("problem.csv", "");
  cfg.problem.n = doc.get_int_or("problem.n", 0);
  cfg.problem.d = doc.get_int_or("problem.d", 0);
  cfg.problem.classes = doc.get_int_or("problem.classes", 0);
  cfg.problem.separation = doc.get_number_or("problem.separation", 2.0);
  cfg.problem.anisotropy = doc.get_number_or("problem.anisotropy", 1.0);
  cfg.problem.noise = detail::parse_noise_rule(doc.get_string_or("problem.noise", "d_over_100"));
  cfg.problem.test_fraction = doc.get_number_or("problem.test_fraction", 0.2);
  cfg.problem.seed = static_cast<std::uint64_t>(doc.get_int_or("problem.seed", 0));
  cfg.problem.interactions = doc.get_bool_or("problem.interactions", false);

  // optimizer flags; weight decay is injected into the objective (ridge term)
  cfg.optimizer.momentum = doc.get_number_or("optimizer.momentum", 0.0);
  cfg.optimizer.nesterov = doc.get_bool_or("optimizer.nesterov", false);
  cfg.optimizer.adagrad = doc.get_bool_or("optimizer.adagrad", false);
  cfg.optimizer.adagrad_eps = doc.get_number_or("optimizer.adagrad_eps", 1e-10);
  cfg.optimizer.asgd_t0 = doc.get_int_or("optimizer.asgd_t0_updates", -1);
  cfg.problem.weight_decay = doc.get_number_or("optimizer.weight_decay", 0.0);
  cfg.optimizer.weight_decay = 0.0;

  // schedule
  cfg.schedule.kind = detail::parse_schedule_kind(doc.get_string("schedule.kind"));
  cfg.schedule.c = doc.get_number_or("schedule.c", 0.0);
  cfg.schedule.b0 = doc.get_int_or("schedule.b0", 1);
  cfg.schedule.m = doc.get_number_or("schedule.m", 0.0);
  cfg.schedule.tau = doc.get_number_or("schedule.tau", 1.0);
  cfg.schedule.factor = doc.get_number_or("schedule.factor", 5.0);
  cfg.schedule.delay_epochs = doc.get_number_or("schedule.delay_epochs", 1.0);
  cfg.schedule.b_max = doc.get_int_or("schedule.b_max", 0);
  cfg.schedule.d_relax = doc.get_int_or("schedule.d_relax", 1);
  cfg.schedule.dwell = doc.get_int_or("schedule.dwell", 1);
  cfg.schedule.hsgd_variant = static_cast<int>(doc.get_int_or("schedule.hsgd_variant", 2));

  if (!doc.has("schedule.f_star")) {
    cfg.f_star_source = FStarSource::Zero;
  } else if (std::holds_alternative<double>(doc.values().at("schedule.f_star"))) {
    cfg.f_star_source = FStarSource::Explicit;
    cfg.f_star_explicit = doc.get_number("schedule.f_star");
  } else {
    const std::string raw = detail::lower(doc.get_string("schedule.f_star"));
    if (raw == "erm")
      cfg.f_star_source = FStarSource::Erm;
    else if (raw == "zero")
      cfg.f_star_source = FStarSource::Zero;
    else
      throw ConfigError("schedule.f_star must be a number, \"zero\" or \"erm\"");
  }

  // lr
  cfg.lr.kind = detail::parse_lr_kind(doc.get_string_or("lr.kind", "Constant"));
  cfg.lr.gamma0 = doc.get_number_or("lr.gamma0", 0.1);
  cfg.lr.rate = doc.get_number_or("lr.rate", 0.0);
  cfg.lr.factor = doc.get_number_or("lr.factor", 5.0);
  cfg.lr.delay_epochs = doc.get_number_or("lr.delay_epochs", 1.0);
  cfg.lr.fn_class = detail::parse_fn_class(doc.get_string_or("lr.fn_class", "pl"));
  cfg.prescribed_alpha = doc.get_number_or("lr.alpha", std::numeric_limits<double>::quiet_NaN());
  cfg.prescribed_beta = doc.get_number_or("lr.beta", std::numeric_limits<double>::quiet_NaN());
  cfg.prescribed_m_sq = doc.get_number_or("lr.m_sq", std::numeric_limits<double>::quiet_NaN());

  // stopping rule
  cfg.stop.max_updates = doc.get_int_or("stop.max_updates", 0);
  cfg.stop.max_epochs = doc.get_number_or("stop.max_epochs", 0.0);
  cfg.stop.grad_norm_floor = doc.get_number_or("stop.grad_norm_floor", 0.0);
  if (doc.has("stop.target_train_loss")) {
    cfg.stop.target = Threshold{ThresholdKind::TrainLossBelow,
                                doc.get_number("stop.target_train_loss")};
  } else if (doc.has("stop.target_test_metric")) {
    cfg.stop.target = Threshold{ThresholdKind::TestMetricAtLeast,
                                doc.get_number("stop.target_test_metric")};
  } else if (doc.has("stop.target_test_loss")) {
    cfg.stop.target = Threshold{ThresholdKind::TestMetricAtMost,
                                doc.get_number("stop.target_test_loss")};
  }
  cfg.erm_target_factor = doc.get_number_or("stop.target_test_loss_erm_factor", 0.0);
  if (cfg.erm_target_factor > 0.0 && cfg.problem.kind == ProblemKind::MulticlassLogistic)
    throw ConfigError("stop.target_test_loss_erm_factor needs a regression problem");
  if (cfg.erm_target_factor > 0.0 && !cfg.stop.target)
    cfg.stop.target = Threshold{ThresholdKind::TestMetricAtMost, 0.0};  // resolved at run start

  // run controls
  const std::string sampling = doc.get_string_or("run.sampling", "with_replacement");
  if (detail::lower(sampling) == "with_replacement")
    cfg.sampling = SamplingMode::WithReplacement;
  else if (detail::lower(sampling) == "shuffle_per_epoch")
    cfg.sampling = SamplingMode::ShufflePerEpoch;
  else
    throw ConfigError("run.sampling must be with_replacement or shuffle_per_epoch");

  cfg.seeds.clear();
  if (doc.has("run.seeds")) {
    for (double s : doc.get_number_list("run.seeds"))
      cfg.seeds.push_back(static_cast<std::uint64_t>(std::llround(s)));
  } else {
    const std::int64_t count = doc.get_int_or("run.seed_count", 1);
    for (std::int64_t s = 0; s < count; ++s) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (cfg.seeds.empty()) throw ConfigError("run.seeds must not be empty");
  cfg.init_seed = static_cast<std::uint64_t>(doc.get_int_or("run.init_seed", 12345));
  cfg.eval_every = doc.get_int_or("run.eval_every", 1);
  cfg.track_m_squared = doc.get_bool_or("run.track_m_squared", false);
  cfg.out_dir = doc.get_string_or("output.dir", "");

  // cross-field validation
  if (cfg.problem.csv_path.empty()) {
    if (cfg.problem.n < 2) throw ConfigError("problem.n must be >= 2");
    if (cfg.problem.d < 1) throw ConfigError("problem.d must be >= 1");
    if (cfg.problem.kind == ProblemKind::MulticlassLogistic && cfg.problem.classes < 2)
      throw ConfigError("problem.classes must be >= 2 for MulticlassLogistic");
  }
  if (cfg.schedule.b0 < 1) throw ConfigError("schedule.b0 must be >= 1");
  if (cfg.schedule.b_max > 0 && cfg.schedule.b_max < cfg.schedule.b0)
    throw ConfigError("schedule.b_max (" + std::to_string(cfg.schedule.b_max) +
                      ") must be >= schedule.b0 (" + std::to_string(cfg.schedule.b0) + ")");
  if (!cfg.stop.any())
    throw ConfigError("stopping rule is empty: set stop.max_updates, stop.max_epochs or a target");
  if (cfg.schedule.kind == ScheduleKind::AdaLoss &&
      cfg.f_star_source == FStarSource::Erm &&
      cfg.problem.kind == ProblemKind::MulticlassLogistic)
    throw ConfigError("schedule.f_star = \"erm\" needs a regression problem");
  if (cfg.lr.kind == LrKind::Prescribed &&
      cfg.problem.kind != ProblemKind::LeastSquares &&
      !(doc.has("lr.alpha") && doc.has("lr.beta")))
    throw ConfigError("lr.kind = Prescribed needs analytic constants "
                      "(LeastSquares problem or explicit lr.alpha / lr.beta)");
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_from_document(KvDocument::parse_file(path));
}

}  // namespace adabatch

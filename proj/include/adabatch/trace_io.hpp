#pragma once

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adabatch/analysis.hpp"
#include "adabatch/engine.hpp"

namespace adabatch {

namespace detail {

// shortest round-trippable decimal form, locale independent
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // prefer a shorter form when it round-trips exactly
  for (int prec = 1; prec < 17; ++prec) {
    char probe[40];
    std::snprintf(probe, sizeof probe, "%.*g", prec, v);
    if (std::strtod(probe, nullptr) == v) return probe;
  }
  return buf;
}

// write-then-rename so concurrent workers never expose partial files
inline void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline constexpr const char* kTraceCsvHeader =
    "k,epoch,batch_size,lr,train_loss,test_metric,grad_comps_opt,grad_comps_eval";

inline std::string trace_to_csv(const RunTrace& trace) {
  std::ostringstream out;
  out << kTraceCsvHeader << "\n";
  for (const TraceRecord& rec : trace.records) {
    out << rec.k << ',' << detail::fmt_double(rec.epoch) << ',' << rec.batch_size << ','
        << detail::fmt_double(rec.lr) << ',' << detail::fmt_double(rec.train_loss) << ','
        << detail::fmt_double(rec.test_metric) << ',' << rec.grad_comps_opt << ','
        << rec.grad_comps_eval << "\n";
  }
  return out.str();
}

inline RunTrace trace_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kTraceCsvHeader)
    throw std::runtime_error("unexpected trace CSV header: " + line);
  RunTrace trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TraceRecord rec;
    std::stringstream ss(line);
    std::string cell;
    const auto next = [&]() {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error("short trace CSV row");
      return cell;
    };
    rec.k = std::stoll(next());
    rec.epoch = std::stod(next());
    rec.batch_size = std::stoll(next());
    rec.lr = std::stod(next());
    rec.train_loss = std::stod(next());
    rec.test_metric = std::stod(next());
    rec.grad_comps_opt = std::stoll(next());
    rec.grad_comps_eval = std::stoll(next());
    trace.records.push_back(rec);
  }
  return trace;
}

inline void write_trace_csv(const std::filesystem::path& path, const RunTrace& trace) {
  detail::write_atomic(path, trace_to_csv(trace));
}

inline RunTrace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return trace_from_csv(buf.str());
}

inline constexpr const char* kDiagnosticsCsvHeader =
    "k,M_sq,grad_norm_sq,diversity,lower_bound,upper_bound_sc,upper_bound_pl,"
    "var_closed,var_bound,violations,stationary";

struct DiagnosticsRow {
  Count k = 0;
  double m_sq = 0.0;
  double grad_norm_sq = 0.0;
  double diversity = 0.0;
  double lower_bound = 0.0;
  double upper_bound_sc = 0.0;
  double upper_bound_pl = 0.0;
  double var_closed = 0.0;
  double var_bound = 0.0;
  int violations = 0;
  bool stationary = false;
};

inline std::string diagnostics_to_csv(const std::vector<DiagnosticsRow>& rows) {
  std::ostringstream out;
  out << kDiagnosticsCsvHeader << "\n";
  for (const DiagnosticsRow& r : rows) {
    out << r.k << ',' << detail::fmt_double(r.m_sq) << ','
        << detail::fmt_double(r.grad_norm_sq) << ',' << detail::fmt_double(r.diversity)
        << ',' << detail::fmt_double(r.lower_bound) << ','
        << detail::fmt_double(r.upper_bound_sc) << ','
        << detail::fmt_double(r.upper_bound_pl) << ',' << detail::fmt_double(r.var_closed)
        << ',' << detail::fmt_double(r.var_bound) << ',' << r.violations << ','
        << (r.stationary ? 1 : 0) << "\n";
  }
  return out.str();
}

inline constexpr const char* kReportCsvHeader =
    "optimizer,epochs_to_target,updates_to_target,reached,seed_count,aggregation";

inline std::string report_to_csv(const std::vector<ComparisonEntry>& entries) {
  std::ostringstream out;
  out << kReportCsvHeader << "\n";
  for (const ComparisonEntry& e : entries) {
    out << e.optimizer << ',';
    if (e.reached)
      out << detail::fmt_double(e.epochs_to_target) << ','
          << detail::fmt_double(e.updates_to_target) << ',';
    else
      out << ",,";
    out << (e.reached ? "true" : "false") << ',' << e.seed_count << ',' << e.aggregation
        << "\n";
  }
  return out.str();
}

// fixed-width text mirror of the report CSV for terminal reading
inline std::string report_to_text(const std::vector<ComparisonEntry>& entries) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-18s %-8s %14s %18s %8s %6s\n", "optimizer", "agg",
                "epochs", "updates", "reached", "seeds");
  out << buf;
  for (const ComparisonEntry& e : entries) {
    std::snprintf(buf, sizeof buf, "%-18s %-8s %14.4f %18.1f %8s %6" PRId64 "\n",
                  e.optimizer.c_str(), e.aggregation.c_str(), e.epochs_to_target,
                  e.updates_to_target, e.reached ? "yes" : "no", e.seed_count);
    out << buf;
  }
  return out.str();
}

}  // namespace adabatch

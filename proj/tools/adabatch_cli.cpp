// Experiment driver: run / sweep / diagnose subcommands over experiment
// config files. Exit status is 0 iff every requested run completed without
// divergence or validation errors.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "adabatch/experiment.hpp"
#include "adabatch/sweep.hpp"

namespace fs = std::filesystem;

namespace {

fs::path resolve_out_dir(const std::string& flag_value, const std::string& name) {
  if (!flag_value.empty()) return fs::path(flag_value);
  if (const char* env = std::getenv("ADABATCH_OUT")) return fs::path(env) / name;
  return fs::path("out") / name;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& raw) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(raw);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto dots = tok.find("..");
    if (dots != std::string::npos) {
      const std::uint64_t lo = std::stoull(tok.substr(0, dots));
      const std::uint64_t hi = std::stoull(tok.substr(dots + 2));
      for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    } else if (!tok.empty()) {
      seeds.push_back(std::stoull(tok));
    }
  }
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mini-batch SGD with adaptive and passive batch-size schedules"};
  app.require_subcommand(1);

  std::string config_path, out_flag, seeds_flag, format = "csv";
  int jobs = 1;

  const auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--config", config_path, "experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    auto* out = cmd->add_option("--out", out_flag, "output directory");
    if (!needs_out) out->description("output directory (optional)");
    cmd->add_option("--seeds", seeds_flag, "override seed list, e.g. 0,1,2 or 0..9");
    cmd->add_option("--jobs", jobs, "parallel worker count")->check(CLI::PositiveNumber);
    cmd->add_option("--format", format, "trace format")->check(CLI::IsMember({"csv", "json"}));
  };

  CLI::App* cmd_run = app.add_subcommand("run", "execute one experiment over its seeds");
  add_common(cmd_run, true);
  CLI::App* cmd_sweep = app.add_subcommand("sweep", "expand a parameter grid and compare");
  add_common(cmd_sweep, true);
  CLI::App* cmd_diagnose =
      app.add_subcommand("diagnose", "replay a run and emit per-iterate diagnostics");
  add_common(cmd_diagnose, true);

  CLI11_PARSE(app, argc, argv);

  try {
    const adabatch::KvDocument doc = adabatch::KvDocument::parse_file(config_path);
    adabatch::ExperimentConfig cfg;
    const bool is_sweep = app.got_subcommand(cmd_sweep);
    if (!is_sweep) {
      cfg = adabatch::experiment_from_document(doc);
      if (!seeds_flag.empty()) cfg.seeds = parse_seed_list(seeds_flag);
    }

    if (app.got_subcommand(cmd_run)) {
      const fs::path out_dir =
          resolve_out_dir(!out_flag.empty() ? out_flag : cfg.out_dir, cfg.name);
      fs::create_directories(out_dir);
      const auto runs = adabatch::run_experiment(cfg, out_dir, jobs,
                                                 adabatch::config_echo(doc), format);
      adabatch::detail::write_atomic(out_dir / (cfg.name + "__summary.csv"),
                                     adabatch::experiment_summary_csv(runs));
      bool diverged = false;
      for (const auto& art : runs) {
        std::cout << cfg.name << " seed " << art.seed << ": "
                  << adabatch::to_string(art.trace.status) << ", updates "
                  << art.trace.final_record().k << ", train_loss "
                  << art.trace.final_record().train_loss << "\n";
        diverged |= art.trace.status == adabatch::RunStatus::Diverged;
      }
      std::cout << "wrote " << runs.size() << " trace(s) to " << out_dir.string() << "\n";
      return diverged ? 2 : 0;
    }

    if (is_sweep) {
      adabatch::SweepPlan plan = adabatch::expand_sweep(doc);
      if (!seeds_flag.empty()) {
        const auto seeds = parse_seed_list(seeds_flag);
        for (auto& combo : plan.combos) combo.config.seeds = seeds;
      }
      const std::string base_name = doc.get_string_or("run.name", "sweep");
      const fs::path out_dir = resolve_out_dir(out_flag, base_name);
      fs::create_directories(out_dir);
      const adabatch::SweepResult result = adabatch::run_sweep(plan, out_dir, jobs);
      adabatch::detail::write_atomic(out_dir / (base_name + "__report.csv"),
                                     adabatch::report_to_csv(result.report));
      adabatch::detail::write_atomic(out_dir / (base_name + "__report.txt"),
                                     adabatch::report_to_text(result.report));
      std::cout << adabatch::report_to_text(result.report);
      std::cout << "wrote report to " << out_dir.string() << "\n";
      return 0;
    }

    // diagnose
    const fs::path out_dir =
        resolve_out_dir(!out_flag.empty() ? out_flag : cfg.out_dir, cfg.name);
    fs::create_directories(out_dir);
    int total_violations = 0;
    for (std::uint64_t seed : cfg.seeds) {
      const auto rows = adabatch::diagnose_run(cfg, seed);
      const fs::path path = out_dir / (cfg.name + "__seed" + std::to_string(seed) + "__diag.csv");
      adabatch::detail::write_atomic(path, adabatch::diagnostics_to_csv(rows));
      int violations = 0;
      for (const auto& row : rows) violations += row.violations;
      total_violations += violations;
      std::cout << cfg.name << " seed " << seed << ": " << rows.size()
                << " checkpoints, " << violations << " bound violation(s) -> "
                << path.string() << "\n";
    }
    return total_violations == 0 ? 0 : 2;
  } catch (const adabatch::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

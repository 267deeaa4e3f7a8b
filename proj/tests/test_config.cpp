#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adabatch/config.hpp"
#include "adabatch/experiment.hpp"
#include "adabatch/sweep.hpp"

using namespace adabatch;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"(
# smoke-test experiment
[run]
name = "smoke"
seeds = [1, 2]
eval_every = 1

[problem]
kind = "LeastSquares"
n = 60
d = 4
seed = 5
test_fraction = 0.2
noise = "unit"

[schedule]
kind = "PadaLinear"
b0 = 2
m = 0.5
b_max = 16

[lr]
kind = "Constant"
gamma0 = 0.05

[stop]
max_updates = 25
)";

std::string write_temp(const std::string& contents, const std::string& name) {
  const std::string path = ::testing::TempDir() + name;
  std::ofstream out(path);
  out << contents;
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string out_file = ::testing::TempDir() + "cli_output.txt";
  const std::string cmd = std::string(ADABATCH_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = slurp(out_file);
  return WEXITSTATUS(status);
}

}  // namespace

TEST(KvDocument, ParsesTablesTypesAndComments) {
  const KvDocument doc = KvDocument::parse(R"(
top = 3
[a]
flag = true            # trailing comment
label = "hash # inside"
nums = [1, 2.5, 3]
names = ["x", "y"]
)");
  EXPECT_EQ(doc.get_int("top"), 3);
  EXPECT_TRUE(doc.get_bool("a.flag"));
  EXPECT_EQ(doc.get_string("a.label"), "hash # inside");
  EXPECT_EQ(doc.get_number_list("a.nums").size(), 3u);
  EXPECT_EQ(doc.get_string_list("a.names")[1], "y");
}

TEST(KvDocument, RejectsMalformedInput) {
  EXPECT_THROW(KvDocument::parse("[table\nx = 1"), ConfigError);
  EXPECT_THROW(KvDocument::parse("just a line"), ConfigError);
  EXPECT_THROW(KvDocument::parse("x = unquoted_string"), ConfigError);
  EXPECT_THROW(KvDocument::parse("x ="), ConfigError);
}

TEST(KvDocument, MissingAndMistypedKeys) {
  const KvDocument doc = KvDocument::parse("x = 1.5");
  EXPECT_THROW(doc.get_string("x"), ConfigError);
  EXPECT_THROW(doc.get_number("absent"), ConfigError);
  EXPECT_THROW(doc.get_int("x"), ConfigError);  // 1.5 is not integral
  EXPECT_EQ(doc.get_number_or("absent", 7.0), 7.0);
}

TEST(ExperimentConfig, ParsesSmallConfig) {
  const ExperimentConfig cfg =
      experiment_from_document(KvDocument::parse(kSmallConfig));
  EXPECT_EQ(cfg.name, "smoke");
  EXPECT_EQ(cfg.problem.kind, ProblemKind::LeastSquares);
  EXPECT_EQ(cfg.schedule.kind, ScheduleKind::PadaLinear);
  EXPECT_EQ(cfg.schedule.b_max, 16);
  EXPECT_EQ(cfg.seeds.size(), 2u);
  EXPECT_EQ(cfg.stop.max_updates, 25);
}

TEST(ExperimentConfig, CapBelowInitialBatchNamesBothFields) {
  std::string bad = kSmallConfig;
  bad.replace(bad.find("b_max = 16"), 10, "b_max = 1 ");
  try {
    experiment_from_document(KvDocument::parse(bad));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("b_max"), std::string::npos);
    EXPECT_NE(msg.find("b0"), std::string::npos);
  }
}

TEST(ExperimentConfig, EmptyStoppingRuleRejected) {
  std::string bad = kSmallConfig;
  bad.replace(bad.find("max_updates = 25"), 16, "# no stop bound ");
  EXPECT_THROW(experiment_from_document(KvDocument::parse(bad)), ConfigError);
}

TEST(ExperimentConfig, ErmFStarNeedsRegression) {
  const char* bad = R"(
[problem]
kind = "MulticlassLogistic"
n = 60
d = 4
classes = 3
[schedule]
kind = "AdaLoss"
b0 = 2
f_star = "erm"
[stop]
max_updates = 5
)";
  EXPECT_THROW(experiment_from_document(KvDocument::parse(bad)), ConfigError);
}

TEST(ExperimentConfig, BundledConfigsParseCleanly) {
  for (const auto& entry : fs::directory_iterator(ADABATCH_CONFIG_DIR)) {
    if (entry.path().extension() != ".toml") continue;
    const KvDocument doc = KvDocument::parse_file(entry.path().string());
    if (doc.keys_with_prefix("variant.").empty() && doc.keys_with_prefix("sweep.").empty()) {
      EXPECT_NO_THROW(experiment_from_document(doc)) << entry.path();
    } else {
      EXPECT_NO_THROW(expand_sweep(doc)) << entry.path();
    }
  }
}

TEST(RunExperiment, WritesTracesAndSummaries) {
  const ExperimentConfig cfg =
      experiment_from_document(KvDocument::parse(kSmallConfig));
  const fs::path dir = fs::path(::testing::TempDir()) / "adabatch_exp";
  fs::create_directories(dir);
  const auto runs = run_experiment(cfg, dir, 2);
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "smoke__seed1.csv"));
  EXPECT_TRUE(fs::exists(dir / "smoke__seed2.json"));
  const std::string csv = slurp(dir / "smoke__seed1.csv");
  EXPECT_EQ(csv.rfind(kTraceCsvHeader, 0), 0u);
  fs::remove_all(dir);
}

TEST(SweepPlan, GridCountsAndLabels) {
  std::string text = kSmallConfig;
  text += "\n[report]\ntarget_train_loss = 2.0\n";
  text += "[sweep]\nschedule.m = [0.1, 0.5]\n";
  text += "[variant.slow]\nlr.gamma0 = 0.01\n[variant.fast]\nlr.gamma0 = 0.1\n";
  const SweepPlan plan = expand_sweep(KvDocument::parse(text));
  EXPECT_EQ(plan.combos.size(), 4u);  // 2 variants x 2 grid points
  EXPECT_EQ(plan.report_target.kind, ThresholdKind::TrainLossBelow);
}

TEST(SweepPlan, EmptyAxisRejected) {
  std::string text = kSmallConfig;
  text += "\n[sweep]\nschedule.m = []\n";
  EXPECT_THROW(expand_sweep(KvDocument::parse(text)), ConfigError);
}

TEST(SweepPlan, OversizedGridRefusedWithCount) {
  std::string text = kSmallConfig;
  text += "\n[report]\ntarget_train_loss = 2.0\n";
  text += "[sweep]\nschedule.m = [1, 2, 3, 4, 5]\nschedule.b0 = [1, 2, 3, 4, 5]\n";
  text += "max_combinations = 10\n";
  try {
    expand_sweep(KvDocument::parse(text));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("25"), std::string::npos);
  }
}

TEST(SweepPlan, ProblemKeysMayNotVary) {
  std::string text = kSmallConfig;
  text += "\n[sweep]\nproblem.n = [50, 60]\n";
  EXPECT_THROW(expand_sweep(KvDocument::parse(text)), ConfigError);
}

TEST(SweepPlan, RunsAndReports) {
  std::string text = kSmallConfig;
  text += "\n[report]\ntarget_train_loss = 2.0\n[sweep]\nschedule.m = [0.2, 0.8]\n";
  const SweepPlan plan = expand_sweep(KvDocument::parse(text));
  const SweepResult result = run_sweep(plan, std::nullopt, 2);
  EXPECT_EQ(result.rows.size(), 4u);          // 2 combos x 2 seeds
  EXPECT_EQ(result.report.size(), 8u);        // 4 aggregation rows per combo
  const std::string csv = report_to_csv(result.report);
  EXPECT_EQ(csv.rfind(kReportCsvHeader, 0), 0u);
}

TEST(Cli, RunIsDeterministicByteForByte) {
  const std::string config = write_temp(kSmallConfig, "cli_smoke.toml");
  const fs::path out_a = fs::path(::testing::TempDir()) / "cli_a";
  const fs::path out_b = fs::path(::testing::TempDir()) / "cli_b";
  ASSERT_EQ(run_cli("run --config " + config + " --out " + out_a.string()), 0);
  ASSERT_EQ(run_cli("run --config " + config + " --out " + out_b.string()), 0);
  EXPECT_EQ(slurp(out_a / "smoke__seed1.csv"), slurp(out_b / "smoke__seed1.csv"));
  EXPECT_EQ(slurp(out_a / "smoke__seed1.json"), slurp(out_b / "smoke__seed1.json"));
  EXPECT_EQ(slurp(out_a / "smoke__summary.csv"), slurp(out_b / "smoke__summary.csv"));
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST(Cli, SeedsFlagOverridesConfig) {
  const std::string config = write_temp(kSmallConfig, "cli_seeds.toml");
  const fs::path out = fs::path(::testing::TempDir()) / "cli_seeds_out";
  ASSERT_EQ(run_cli("run --config " + config + " --out " + out.string() + " --seeds 7,9"), 0);
  EXPECT_TRUE(fs::exists(out / "smoke__seed7.csv"));
  EXPECT_TRUE(fs::exists(out / "smoke__seed9.csv"));
  EXPECT_FALSE(fs::exists(out / "smoke__seed1.csv"));
  fs::remove_all(out);
}

TEST(Cli, InvalidConfigExitsOneWithFieldMessage) {
  std::string bad = kSmallConfig;
  bad.replace(bad.find("b_max = 16"), 10, "b_max = 1 ");
  const std::string config = write_temp(bad, "cli_bad.toml");
  std::string output;
  EXPECT_EQ(run_cli("run --config " + config + " --out /tmp/unused_cli_dir", &output), 1);
  EXPECT_NE(output.find("b_max"), std::string::npos);
}

TEST(Cli, DivergenceExitsTwoAndKeepsPartialTrace) {
  std::string diverging = kSmallConfig;
  diverging.replace(diverging.find("gamma0 = 0.05"), 13, "gamma0 = 50.0");
  const std::string config = write_temp(diverging, "cli_diverge.toml");
  const fs::path out = fs::path(::testing::TempDir()) / "cli_diverge_out";
  std::string output;
  EXPECT_EQ(run_cli("run --config " + config + " --out " + out.string(), &output), 2);
  EXPECT_TRUE(fs::exists(out / "smoke__seed1.csv"));
  EXPECT_NE(slurp(out / "smoke__seed1.json").find("diverged"), std::string::npos);
  fs::remove_all(out);
}

TEST(Cli, DiagnoseEmitsBoundColumns) {
  const char* diag_config = R"(
[run]
name = "diagq"
seeds = [3]
[problem]
kind = "LeastSquares"
n = 60
d = 4
seed = 5
test_fraction = 0.2
noise = "unit"
[schedule]
kind = "AdaLoss"
b0 = 4
f_star = "erm"
[lr]
kind = "Prescribed"
fn_class = "pl"
[stop]
max_updates = 15
)";
  const std::string config = write_temp(diag_config, "cli_diag.toml");
  const fs::path out = fs::path(::testing::TempDir()) / "cli_diag_out";
  std::string output;
  ASSERT_EQ(run_cli("diagnose --config " + config + " --out " + out.string(), &output), 0)
      << output;
  const std::string csv = slurp(out / "diagq__seed3__diag.csv");
  EXPECT_EQ(csv.rfind(kDiagnosticsCsvHeader, 0), 0u);
  // a converged quadratic run: bound columns populated, zero violations
  EXPECT_NE(output.find("0 bound violation(s)"), std::string::npos);
  std::string second;
  ASSERT_EQ(run_cli("diagnose --config " + config + " --out " + out.string(), &second), 0);
  EXPECT_EQ(csv, slurp(out / "diagq__seed3__diag.csv"));  // replay determinism
  fs::remove_all(out);
}

TEST(Cli, EnvVarSetsDefaultOutputRoot) {
  const std::string config = write_temp(kSmallConfig, "cli_env.toml");
  const fs::path root = fs::path(::testing::TempDir()) / "cli_env_root";
  const std::string out_file = ::testing::TempDir() + "cli_env_output.txt";
  const std::string cmd = "ADABATCH_OUT=" + root.string() + " " + ADABATCH_CLI_PATH +
                          " run --config " + config + " > " + out_file + " 2>&1";
  ASSERT_EQ(WEXITSTATUS(std::system(cmd.c_str())), 0) << slurp(out_file);
  EXPECT_TRUE(fs::exists(root / "smoke" / "smoke__seed1.csv"));
  fs::remove_all(root);
}

TEST(Cli, JsonFormatEmbedsTrace) {
  const std::string config = write_temp(kSmallConfig, "cli_json.toml");
  const fs::path out = fs::path(::testing::TempDir()) / "cli_json_out";
  ASSERT_EQ(run_cli("run --config " + config + " --out " + out.string() + " --format json"), 0);
  EXPECT_FALSE(fs::exists(out / "smoke__seed1.csv"));
  const std::string summary = slurp(out / "smoke__seed1.json");
  EXPECT_NE(summary.find("\"trace\""), std::string::npos);
  EXPECT_NE(summary.find("\"batch_size\""), std::string::npos);
  fs::remove_all(out);
}

TEST(Cli, SweepWritesReport) {
  std::string text = kSmallConfig;
  text += "\n[report]\ntarget_train_loss = 2.0\n[sweep]\nschedule.m = [0.2, 0.8]\n";
  const std::string config = write_temp(text, "cli_sweep.toml");
  const fs::path out = fs::path(::testing::TempDir()) / "cli_sweep_out";
  std::string output;
  ASSERT_EQ(run_cli("sweep --config " + config + " --out " + out.string(), &output), 0)
      << output;
  EXPECT_TRUE(fs::exists(out / "smoke__report.csv"));
  EXPECT_TRUE(fs::exists(out / "smoke__report.txt"));
  fs::remove_all(out);
}

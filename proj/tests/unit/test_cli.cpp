#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fopro/artifacts.hpp"
#include "fopro/checkpoint.hpp"
#include "fopro/commands.hpp"
#include "fopro/errors.hpp"
#include "helpers.hpp"

using namespace fopro;
using namespace fopro::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fopro_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "fopro");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const fs::path& dir, const ExperimentConfig& c) {
  const auto path = dir / "config.json";
  save_config(path, c);
  return path;
}

void fake_report(const fs::path& dir, Method method, uint64_t seed, double bacc, double mcc,
                 std::vector<std::string> names = {"a", "b"}) {
  fs::create_directories(dir);
  auto config = desk_config(method, seed);
  eval::MetricsReport r;
  r.balanced_accuracy = bacc;
  r.mcc = mcc;
  r.accuracy = bacc;
  r.macro_f1 = bacc;
  r.grouped.head = 1.0;
  r.grouped.all = 1.0;
  std::ofstream(dir / "report_test.json") << report_document(config, names, "test", r).dump(2);
}

// One short trained run shared by the evaluate and inspect tests.
class TrainedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("trained"));
    auto c = fopro::testing::tiny_config(Method::fopro_kd, 1);
    c.schedule.max_epochs = 6;
    c.schedule.early_stop_patience = 5;
    const auto cfg = write_config(*dir_, c);
    const auto r = invoke({"train", "--config", cfg.string(), "--out", (*dir_ / "run").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path run_dir() { return *dir_ / "run"; }
  static fs::path* dir_;
};

fs::path* TrainedRun::dir_ = nullptr;

}  // namespace

TEST(Cli, BuildDatasetIsDeterministicAndPrintsCounts) {
  const auto dir = scratch("build");
  const auto cfg = write_config(dir, fopro::testing::tiny_config(Method::ce));
  const auto a = invoke({"build-dataset", "--config", cfg.string(), "--out", (dir / "a").string()});
  const auto b = invoke({"build-dataset", "--config", cfg.string(), "--out", (dir / "b").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(read_file(dir / "a" / "manifest.csv"), read_file(dir / "b" / "manifest.csv"));
  EXPECT_EQ(read_file(dir / "a" / "class_counts.csv"), "class,train,val,test\na,64,4,6\nb,32,4,6\nc,12,4,6\nd,6,4,6\n");
  EXPECT_NE(a.out.find("total"), std::string::npos);
}

TEST(Cli, BuildDatasetReproducesTheIsicTargets) {
  const auto dir = scratch("isic");
  auto c = desk_config(Method::ce, 0);
  c.dataset.fixture = data::default_fixture_path().string();
  c.dataset.imbalance_label = "1:100";
  c.dataset.val_per_class = 50;
  c.dataset.test_per_class = 100;
  c.dataset.class_names.clear();
  c.dataset.full_counts.clear();
  c.dataset.train_counts.clear();
  RunOptions o;
  o.config = write_config(dir, c).string();
  o.out = (dir / "out").string();
  std::ostringstream out;
  const auto s = cmd_build_dataset(o, out);
  EXPECT_EQ(s.train, (std::vector<int64_t>{12725, 4372, 3173, 1788, 717, 478, 103, 89}));
}

TEST(Cli, ShortfallIsReportedWithTheClassName) {
  const auto dir = scratch("shortfall");
  auto c = fopro::testing::tiny_config(Method::ce);
  c.dataset.train_counts = {64, 32, 12, 9};
  const auto cfg = write_config(dir, c);
  const auto r = invoke({"build-dataset", "--config", cfg.string(), "--out", (dir / "a").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_NE(r.err.find("'d'"), std::string::npos) << r.err;
}

TEST(Cli, BadArgumentsExitNonzero) {
  EXPECT_NE(invoke({}).code, 0);
  EXPECT_EQ(invoke({"train", "--method", "svm", "--out", scratch("bad_method").string()}).code, 1);
  EXPECT_EQ(invoke({"train", "--resume", "--out", scratch("no_ckpt").string()}).code, 1);
  EXPECT_EQ(invoke({"evaluate", scratch("empty_run").string()}).code, 1);
}

TEST(Cli, OutputRootComesFromTheEnvironment) {
  const auto root = scratch("root");
  ::setenv(kOutputRootEnv, root.c_str(), 1);
  EXPECT_EQ(default_output_root(), root);
  RunOptions o;
  o.seed = 3;
  const auto config = resolve_config(o);
  EXPECT_EQ(resolve_run_dir(config, o), root / "fopro_kd-seed3");
  o.out = "elsewhere";
  EXPECT_EQ(resolve_run_dir(config, o), fs::path("elsewhere"));
  ::unsetenv(kOutputRootEnv);
  EXPECT_EQ(default_output_root(), fs::path("runs"));
}

TEST_F(TrainedRun, RunDirectoryIsSelfContained) {
  for (const auto* name : {"config.json", "manifest.csv", "metrics.jsonl", "report_test.json",
                           "plots/loss_curves.svg", "plots/confusion_test.svg", "checkpoints/fpg.ckpt"}) {
    EXPECT_TRUE(fs::exists(run_dir() / name)) << name;
  }
}

TEST_F(TrainedRun, EvaluateIsRepeatable) {
  std::ostringstream out;
  const auto a = cmd_evaluate(run_dir(), "test", "best", out);
  const auto first = read_file(run_dir() / "report_test.json");
  const auto b = cmd_evaluate(run_dir(), "test", "best", out);
  EXPECT_EQ(read_file(run_dir() / "report_test.json"), first);
  EXPECT_EQ(a.mcc, b.mcc);
  // The test split is class-balanced.
  EXPECT_NEAR(a.accuracy, a.balanced_accuracy, 1e-12);
  EXPECT_THROW(cmd_evaluate(run_dir(), "test", (run_dir() / "nope.ckpt").string(), out), CheckpointError);
  EXPECT_EQ(invoke({"evaluate", run_dir().string(), "--checkpoint", "final"}).code, 0);
}

TEST_F(TrainedRun, RandomStudentIsAtChance) {
  const auto config = load_config(run_dir() / "config.json");
  const int k = static_cast<int>(config.dataset.class_names.size());
  const auto path = run_dir() / "random_student.ckpt";
  double total = 0.0;
  const int trials = 5;
  for (int i = 0; i < trials; ++i) {
    torch::manual_seed(100 + i);
    StudentNet s(config.model.student_arch, k, teacher_feature_dim(config));
    save_student(path, s, "random");
    std::ostringstream out;
    total += cmd_evaluate(run_dir(), "test", path.string(), out).accuracy;
  }
  const double n = trials * k * static_cast<double>(config.dataset.test_per_class);
  const double p = 1.0 / k;
  EXPECT_NEAR(total / trials, p, 3.0 * std::sqrt(p * (1.0 - p) / n));
}

TEST_F(TrainedRun, InspectPromptsExportsValidImages) {
  std::ostringstream out;
  const auto result = cmd_inspect_prompts(run_dir(), 3, 0, out);
  EXPECT_EQ(result.alphas.back(), 1.0);
  for (const auto& f : result.files) {
    const auto img = artifacts::read_png(f);
    ASSERT_TRUE(img.defined() && img.numel() > 0) << f;
  }
  const auto x = artifacts::read_png(run_dir() / "prompts" / "x.png");
  const auto identity = artifacts::read_png(run_dir() / "prompts" / "x_hat_alpha_1.00.png");
  EXPECT_TRUE(torch::equal(x, identity));
  const auto zero = artifacts::read_png(run_dir() / "prompts" / "x_hat_alpha_0.00.png");
  EXPECT_FALSE(torch::equal(x, zero));
}

TEST(Cli, CompareSingleRunGivesOneRow) {
  const auto dir = scratch("compare_one");
  fake_report(dir / "r", Method::ce, 0, 0.5, 0.2);
  std::ostringstream out;
  const auto t = cmd_compare({dir / "r"}, "test", dir / "t.csv", out);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0].runs, 1);
  EXPECT_FALSE(t.rows[0].stddev.at("balanced_accuracy").has_value());
  EXPECT_TRUE(fs::exists(dir / "t.csv"));
}

TEST(Cli, CompareAggregatesSeedsAndSortsMethods) {
  const auto dir = scratch("compare_many");
  const std::vector<double> kd{0.6, 0.7, 0.8};
  std::vector<fs::path> runs;
  for (int s = 0; s < 3; ++s) {
    runs.push_back(dir / ("kd" + std::to_string(s)));
    fake_report(runs.back(), Method::fopro_kd, s, kd[s], 0.1 * s);
  }
  runs.push_back(dir / "ce");
  fake_report(runs.back(), Method::ce, 0, 0.65, 0.3);
  std::ostringstream out;
  const auto t = cmd_compare(runs, "test", dir / "t.csv", out);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].method, "fopro_kd");
  EXPECT_EQ(t.rows[1].method, "ce");
  EXPECT_NEAR(t.rows[0].mean.at("balanced_accuracy"), 0.7, 1e-12);
  // Sample standard deviation of {0.6, 0.7, 0.8}.
  EXPECT_NEAR(*t.rows[0].stddev.at("balanced_accuracy"), 0.1, 1e-12);
  EXPECT_NEAR(*t.rows[0].stddev.at("mcc"), 0.1, 1e-12);
  EXPECT_NE(read_file(dir / "t.csv").find("balanced_accuracy_std"), std::string::npos);
}

TEST(Cli, CompareRefusesDifferentClassSets) {
  const auto dir = scratch("compare_mixed");
  fake_report(dir / "a", Method::ce, 0, 0.5, 0.1, {"a", "b"});
  fake_report(dir / "b", Method::ce, 1, 0.5, 0.1, {"a", "c"});
  std::ostringstream out;
  EXPECT_THROW(cmd_compare({dir / "a", dir / "b"}, "test", dir / "t.csv", out), InvalidInput);
  EXPECT_EQ(invoke({"compare", (dir / "a").string(), (dir / "b").string(), "--out", (dir / "t.csv").string()}).code, 1);
}

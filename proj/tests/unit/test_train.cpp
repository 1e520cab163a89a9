#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "fopro/checkpoint.hpp"
#include "fopro/errors.hpp"
#include "fopro/train.hpp"
#include "helpers.hpp"

using namespace fopro;
using fopro::testing::tiny_config;
namespace fs = std::filesystem;

namespace {

fs::path run_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fopro_train_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Schedule, FiveExploitThenOneExplore) {
  using enum Phase;
  PhaseSchedule s;
  s.max_epochs = 12;
  EXPECT_EQ(s.sequence(), (std::vector<Phase>{exploit, exploit, exploit, exploit, exploit, explore, exploit, exploit,
                                              exploit, exploit, exploit, explore}));
  for (const int n : {6, 12, 30}) {
    s.max_epochs = n;
    const auto seq = s.sequence();
    ASSERT_EQ(static_cast<int>(seq.size()), n);
    for (int e = 0; e < n; ++e) EXPECT_EQ(seq[e], e % 6 == 5 ? explore : exploit) << n << " " << e;
  }
  s.early_stop_patience = 0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Schedule, OnlyTheFullMethodAlternates) {
  Trainer ce(tiny_config(Method::ce), run_dir("phase_ce"));
  Trainer kd(tiny_config(Method::fopro_kd), run_dir("phase_kd"));
  EXPECT_EQ(ce.phase_of(5), Phase::exploit);
  EXPECT_EQ(kd.phase_of(5), Phase::explore);
  EXPECT_FALSE(ce.teacher().has_value());
  EXPECT_FALSE(ce.prompt_generator().has_value());
  EXPECT_TRUE(kd.prompt_generator().has_value());
}

TEST(Train, ZeroDistillationWeightMatchesBalancedSoftmax) {
  auto kd_cfg = tiny_config(Method::fopro_kd);
  kd_cfg.loss.lambda_f = 0.0;
  Trainer kd(kd_cfg, run_dir("lf0_kd"));
  Trainer bsm(tiny_config(Method::bsm), run_dir("lf0_bsm"));
  EXPECT_EQ(state_hash(*kd.student()), state_hash(*bsm.student()));
  TrainOptions opts;
  opts.stop_after_epoch = 4;
  kd.train(opts);
  bsm.train(opts);
  EXPECT_EQ(state_hash(*kd.student()), state_hash(*bsm.student()));
}

TEST(Train, PhaseIsolationHoldsOnEveryStep) {
  auto cfg = tiny_config(Method::fopro_kd);
  cfg.debug_phase_isolation = true;
  Trainer t(cfg, run_dir("isolation"));
  TrainOptions opts;
  opts.write_artifacts = false;
  const auto result = t.train(opts);
  EXPECT_TRUE(result.finished);
  EXPECT_GT(t.isolation().steps_checked, 0);
  EXPECT_EQ(t.isolation().violations, 0) << (t.isolation().messages.empty() ? "" : t.isolation().messages[0]);
  EXPECT_EQ(result.state.phases_run, cfg.schedule.sequence());
}

TEST(Train, LossMonitorsStayInBounds) {
  auto cfg = tiny_config(Method::fopro_kd);
  cfg.schedule.max_epochs = 6;
  cfg.schedule.early_stop_patience = 6;
  Trainer t(cfg, run_dir("bounds"));
  TrainOptions opts;
  opts.write_artifacts = false;
  const auto result = t.train(opts);
  const double log_ct = std::log(static_cast<double>(teacher_feature_dim(cfg)));
  for (const auto& r : result.records) {
    EXPECT_GE(r.distill.min, 0.0);
    EXPECT_LE(r.distill.max, 4.0);
    if (r.phase == Phase::explore) {
      EXPECT_GE(r.bn.min, 0.0);
      EXPECT_GE(r.balance.min, -log_ct - 1e-6);
      EXPECT_LE(r.balance.max, 1e-6);
      EXPECT_FALSE(r.val.has_value());
    } else {
      EXPECT_TRUE(r.val.has_value());
    }
  }
}

TEST(Train, ExploreWithoutAdversaryStillMovesOnlyThePrompt) {
  auto cfg = tiny_config(Method::fopro_kd);
  cfg.loss.gamma = 0.0;
  cfg.schedule.max_epochs = 6;
  cfg.schedule.early_stop_patience = 6;
  Trainer t(cfg, run_dir("gamma0"));
  TrainOptions opts;
  opts.stop_after_epoch = 4;
  t.train(opts);
  const auto student0 = state_hash(*t.student());
  const auto fpg0 = state_hash(**t.prompt_generator());
  opts.stop_after_epoch = 5;
  opts.resume = true;
  t.train(opts);
  EXPECT_EQ(state_hash(*t.student()), student0);
  EXPECT_NE(state_hash(**t.prompt_generator()), fpg0);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto cfg = tiny_config(Method::fopro_kd, 3);
  const auto full_dir = run_dir("resume_full");
  const auto split_dir = run_dir("resume_split");
  TrainOptions opts;
  opts.write_artifacts = false;
  Trainer full(cfg, full_dir);
  full.train(opts);

  {
    Trainer first(cfg, split_dir);
    TrainOptions stop = opts;
    stop.stop_after_epoch = 6;
    const auto partial = first.train(stop);
    EXPECT_FALSE(partial.finished);
    EXPECT_EQ(partial.state.next_epoch, 7);
  }
  Trainer second(cfg, split_dir);
  TrainOptions resume = opts;
  resume.resume = true;
  const auto rest = second.train(resume);
  EXPECT_TRUE(rest.finished);
  EXPECT_EQ(rest.records.front().epoch, 7);
  EXPECT_EQ(rest.state.phases_run, cfg.schedule.sequence());
  EXPECT_EQ(state_hash(*second.student()), state_hash(*full.student()));
  EXPECT_EQ(state_hash(**second.prompt_generator()), state_hash(**full.prompt_generator()));
  EXPECT_EQ(read_file(split_dir / "metrics.jsonl"), read_file(full_dir / "metrics.jsonl"));
}

TEST(Train, SeededRunsAreIdentical) {
  auto cfg = tiny_config(Method::rs, 5);
  cfg.schedule.max_epochs = 3;
  cfg.schedule.early_stop_patience = 3;
  TrainOptions opts;
  opts.write_artifacts = false;
  Trainer a(cfg, run_dir("det_a"));
  Trainer b(cfg, run_dir("det_b"));
  a.train(opts);
  b.train(opts);
  EXPECT_EQ(read_file(a.run_dir() / "metrics.jsonl"), read_file(b.run_dir() / "metrics.jsonl"));
}

TEST(Train, NonFiniteLossAborts) {
  Trainer t(tiny_config(Method::fopro_kd), run_dir("nan"));
  {
    torch::NoGradGuard no_grad;
    t.student()->classifier()->weight.fill_(std::numeric_limits<float>::quiet_NaN());
  }
  try {
    t.run_exploit_epoch();
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST(Train, ResumeRefusesMissingCorruptOrForeignCheckpoints) {
  const auto cfg = tiny_config(Method::ce);
  const auto dir = run_dir("bad_resume");
  TrainOptions resume;
  resume.resume = true;
  {
    Trainer t(cfg, dir);
    EXPECT_THROW(t.train(resume), CheckpointError);
  }
  fs::create_directories(dir / "checkpoints");
  std::ofstream(dir / "checkpoints" / "last.ckpt") << "garbage";
  {
    Trainer t(cfg, dir);
    EXPECT_THROW(t.train(resume), CheckpointError);
  }
  {
    Trainer t(cfg, dir);
    TrainOptions stop;
    stop.stop_after_epoch = 0;
    t.train(stop);
  }
  auto other = cfg;
  other.loss.mu = 5.0;
  Trainer t(other, dir);
  EXPECT_THROW(t.train(resume), CheckpointError);
}

TEST(Train, FinishedRunWritesArtifacts) {
  auto cfg = tiny_config(Method::rw);
  cfg.schedule.max_epochs = 2;
  cfg.schedule.early_stop_patience = 2;
  const auto dir = run_dir("artifacts");
  Trainer t(cfg, dir);
  const auto result = t.train();
  ASSERT_TRUE(result.test_report.has_value());
  for (const auto* name : {"config.json", "manifest.csv", "metrics.jsonl", "report_val.json", "report_test.json",
                           "confusion_test.csv", "plots/loss_curves.svg", "plots/val_curves.svg",
                           "checkpoints/best_student.ckpt", "checkpoints/final_student.ckpt",
                           "checkpoints/last.ckpt"}) {
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  }
  const auto log = read_metrics_log(dir / "metrics.jsonl");
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(log[0]["phase"], "exploit");
  EXPECT_TRUE(log[0]["val"].is_object());
  EXPECT_EQ(load_config(dir / "config.json").method, Method::rw);
}

TEST(Train, EarlyStoppingCountsExploitEpochs) {
  auto cfg = tiny_config(Method::fopro_kd);
  cfg.optimizer.lr = 1e-9;
  cfg.schedule.early_stop_patience = 2;
  TrainOptions opts;
  opts.write_artifacts = false;
  Trainer t(cfg, run_dir("early"));
  const auto result = t.train(opts);
  int exploit_after_best = 0;
  for (const auto& r : result.records) {
    if (r.epoch > result.state.best_epoch && r.phase == Phase::exploit) ++exploit_after_best;
  }
  if (result.state.stopped_early) {
    EXPECT_EQ(exploit_after_best, 2);
    EXPECT_LT(result.state.next_epoch, cfg.schedule.max_epochs);
  } else {
    EXPECT_EQ(result.state.next_epoch, cfg.schedule.max_epochs);
    EXPECT_LT(exploit_after_best, 2);
  }
}

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "fopro/config.hpp"
#include "fopro/data.hpp"
#include "fopro/eval.hpp"
#include "fopro/fpg.hpp"
#include "fopro/models.hpp"
#include "fopro/synthetic.hpp"

namespace fopro {

// Running mean plus extremes of one per-batch loss component.
struct LossMonitor {
  double sum = 0.0;
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();
  int64_t count = 0;

  void add(double v);
  std::optional<double> mean() const;
};

struct ValidationMetrics {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  double mcc = 0.0;
  double macro_f1 = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  Phase phase = Phase::exploit;
  int64_t batches = 0;
  double lr = 0.0;
  LossMonitor total;
  LossMonitor target;    // L_t
  LossMonitor distill;   // L_f
  LossMonitor bn;        // L_BN
  LossMonitor balance;   // L_bal
  LossMonitor inversion; // L_inv
  std::optional<ValidationMetrics> val;
  bool improved = false;

  nlohmann::json to_json() const;
};

struct TrainingState {
  int next_epoch = 0;
  double best_val_accuracy = -1.0;
  int best_epoch = -1;
  int exploit_epochs_since_improvement = 0;
  bool stopped_early = false;
  std::vector<Phase> phases_run;
};

// Per-step phase-isolation bookkeeping (debug mode only).
struct IsolationReport {
  int64_t steps_checked = 0;
  int64_t violations = 0;
  std::vector<std::string> messages;
};

struct TrainOptions {
  bool resume = false;
  // Return after this epoch index completes, as if interrupted.
  std::optional<int> stop_after_epoch;
  bool write_artifacts = true;
};

struct TrainingResult {
  TrainingState state;
  std::vector<EpochRecord> records;  // epochs run by this call
  std::optional<eval::MetricsReport> val_report;
  std::optional<eval::MetricsReport> test_report;
  bool finished = false;
};

// Data for one experiment: the split manifest and the decoded splits.
struct ExperimentData {
  data::LongTailSpec spec;
  data::DatasetManifest manifest;
  std::optional<data::SyntheticImageGenerator> generator;
  data::ImageSet train;
  data::ImageSet val;
  data::ImageSet test;
  std::vector<int64_t> train_counts;
  ShotGrouping grouping;
};

data::DatasetManifest build_manifest(const ExperimentConfig& config);
data::ImageLoader make_loader(const ExperimentConfig& config);
ExperimentData load_experiment_data(const ExperimentConfig& config);

// Random frozen teacher whose BN statistics come from 1/f noise images, or
// the configured checkpoint.
Teacher build_teacher(const ExperimentConfig& config);
int64_t teacher_feature_dim(const ExperimentConfig& config);

// Arg-max predictions of the student in eval mode.
std::vector<int> predict_labels(StudentNet& student, const data::ImageSet& set);
eval::ConfusionMatrix confusion_on(StudentNet& student, const data::ImageSet& set, int num_classes);

class Trainer {
 public:
  // Assembles data, teacher, student, prompt generator and optimizers.
  // `run_dir` receives checkpoints, logs and reports.
  Trainer(ExperimentConfig config, std::filesystem::path run_dir);

  EpochRecord run_exploit_epoch();
  EpochRecord run_explore_epoch();

  TrainingResult train(const TrainOptions& options = {});

  ValidationMetrics validate();
  eval::ConfusionMatrix confusion(data::Split split);
  std::vector<int> predict(const data::ImageSet& set);

  void save_checkpoint(const std::filesystem::path& path);
  void load_checkpoint(const std::filesystem::path& path);

  const ExperimentConfig& config() const { return config_; }
  const ExperimentData& data() const { return data_; }
  const TrainingState& state() const { return state_; }
  StudentNet& student() { return student_; }
  std::optional<Teacher>& teacher() { return teacher_; }
  std::optional<PromptGenerator>& prompt_generator() { return fpg_; }
  const IsolationReport& isolation() const { return isolation_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }

  // Epoch-local RNG seeds derived from the run seed, so resuming at an epoch
  // boundary replays exactly.
  uint64_t order_seed(int epoch) const;
  uint64_t augment_seed(int epoch) const;
  uint64_t prompt_seed(int epoch) const;

  // Only the full method alternates; every other method exploits each epoch.
  Phase phase_of(int epoch) const;

 private:
  std::vector<std::vector<std::size_t>> epoch_batches(int epoch);
  torch::Tensor target_loss(const torch::Tensor& logits, const torch::Tensor& labels) const;
  void set_epoch_lr(int epoch);
  double current_lr() const;
  void write_reports(TrainingResult& result);
  void check_finite(const EpochRecord& record, int64_t batch,
                    std::initializer_list<std::pair<const char*, double>> parts) const;

  ExperimentConfig config_;
  std::filesystem::path run_dir_;
  std::string config_hash_;
  ExperimentData data_;
  StudentNet student_{nullptr};
  std::optional<Teacher> teacher_;
  BNStatistics running_stats_;
  std::optional<PromptGenerator> fpg_;
  std::unique_ptr<torch::optim::Optimizer> student_opt_;
  std::unique_ptr<torch::optim::Optimizer> fpg_opt_;
  std::vector<int64_t> bsm_counts_;
  torch::Tensor class_weights_;
  TrainingState state_;
  IsolationReport isolation_;
  int current_epoch_ = 0;
};

// Metrics log: one JSON object per line. A torn final line is dropped.
std::vector<nlohmann::json> read_metrics_log(const std::filesystem::path& path);

// Contents of report_<split>.json.
nlohmann::json report_document(const ExperimentConfig& config, const std::vector<std::string>& class_names,
                               const std::string& split, const eval::MetricsReport& report);

}  // namespace fopro

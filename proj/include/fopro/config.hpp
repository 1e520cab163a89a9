#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fopro/data.hpp"
#include "fopro/losses.hpp"
#include "fopro/models.hpp"

namespace fopro {

// Experiment rows: plain cross-entropy, class-balanced resampling,
// inverse-frequency reweighting, balanced softmax, distillation without
// prompts, the full alternating method, and the teacher transfer baselines.
enum class Method { ce, rs, rw, bsm, ekd, fopro_kd, linear_probe, fine_tune };

const char* to_string(Method method);
Method method_from_string(const std::string& text);

bool uses_teacher(Method method);
bool uses_distillation(Method method);

enum class Phase { exploit, explore };

const char* to_string(Phase phase);

struct PhaseSchedule {
  int exploit_epochs_per_cycle = 5;
  int explore_epochs_per_cycle = 1;
  int max_epochs = 100;
  int early_stop_patience = 20;  // counted in exploit epochs

  void validate() const;
  Phase phase_of(int epoch) const;
  std::vector<Phase> sequence() const;
};

struct DatasetConfig {
  std::string mode = "synthetic";  // "synthetic" or "files"
  std::vector<std::string> class_names;
  std::vector<int64_t> full_counts;
  std::vector<int64_t> train_counts;
  int64_t val_per_class = 50;
  int64_t test_per_class = 100;
  std::string imbalance_label;
  // Split-table fixture; when set, names and counts come from its rows.
  std::string fixture;
  // "path,label" listing of every available image (files mode).
  std::string source_manifest;
  int64_t resolution = 32;
  // Split/generation seed; defaults to the run seed.
  std::optional<uint64_t> seed;
  int64_t head_min = 700;
  int64_t tail_max = 70;
};

struct ModelConfig {
  ArchSpec teacher_arch{"toy_cnn", {16, 32, 64}};
  // Empty: build a randomly initialized teacher whose BN statistics are
  // calibrated on 1/f noise images.
  std::string teacher_checkpoint;
  uint64_t teacher_seed = 1234;
  int64_t calibration_images = 256;
  std::array<double, 3> norm_mean = Teacher::kImageNetMean;
  std::array<double, 3> norm_std = Teacher::kImageNetStd;
  ArchSpec student_arch{"toy_cnn", {16, 32}};
};

struct OptimizerConfig {
  std::string name = "adam";       // "adam" or "sgd"
  double lr = 3e-4;
  double momentum = 0.9;           // sgd only
  double weight_decay = 0.0;
  std::string scheduler = "none";  // "none" or "cosine"
};

struct FpgConfig {
  int64_t noise_dim = 128;
  double lr = 1e-3;
  double init_weight_std = 0.01;
  double init_bias = 1.0;
};

struct ExperimentConfig {
  Method method = Method::fopro_kd;
  uint64_t seed = 0;
  DatasetConfig dataset;
  ModelConfig model;
  LossWeights loss;
  FpgConfig fpg;
  OptimizerConfig optimizer;
  PhaseSchedule schedule;
  int64_t batch_size = 32;
  data::AugmentOptions augment;
  double grad_clip_norm = 10.0;
  int threads = 1;
  bool debug_phase_isolation = false;
  std::string device = "cpu";
  std::string out_dir;

  // Throws ConfigError naming the offending field.
  void validate() const;

  uint64_t dataset_seed() const { return dataset.seed.value_or(seed); }
  // Fills class names and counts from the fixture when one is configured.
  data::LongTailSpec longtail_spec() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

// Hex FNV-1a of the canonical JSON, ignoring fields that do not affect
// results (out_dir, device, threads, debug flags).
std::string config_hash(const ExperimentConfig& config);

// Desk-scale preset: 8 synthetic classes at 32x32 with 1:100 imbalance,
// toy teacher and student.
ExperimentConfig desk_config(Method method, uint64_t seed);

}  // namespace fopro

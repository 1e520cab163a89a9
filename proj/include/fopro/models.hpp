#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fopro/losses.hpp"

namespace fopro {

// Backbone architecture identifier. "toy_cnn" takes one width per
// conv+BN stage; "resnet18" and "resnet50" ignore widths.
struct ArchSpec {
  std::string name = "toy_cnn";
  std::vector<int64_t> widths = {16, 32};

  std::string to_string() const;
  static ArchSpec parse(const std::string& text);
  bool operator==(const ArchSpec&) const = default;
};

// A residual block or conv stage that reports the input of each BN layer it
// runs when `capture` is non-null. Capture observes; it never changes BN state.
class BackboneBlockImpl : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(torch::Tensor x, BNStatistics* capture) = 0;
};

// Convolutional feature extractor ending in global average pooling.
class BackboneImpl : public torch::nn::Module {
 public:
  BackboneImpl(const ArchSpec& arch, int64_t in_channels = 3);

  // B x C x H x W -> B x feature_dim
  torch::Tensor forward(const torch::Tensor& x, BNStatistics* capture = nullptr);

  int64_t feature_dim() const { return feature_dim_; }
  const ArchSpec& arch() const { return arch_; }
  // BN layers in forward order.
  const std::vector<torch::nn::BatchNorm2d>& bn_layers() const { return bn_layers_; }

 private:
  ArchSpec arch_;
  int64_t feature_dim_ = 0;
  std::vector<std::shared_ptr<BackboneBlockImpl>> blocks_;
  std::vector<torch::nn::BatchNorm2d> bn_layers_;
};

TORCH_MODULE(Backbone);

enum class TransferMode { linear_probe, fine_tune, distill_student };

const char* to_string(TransferMode mode);

struct TeacherOutput {
  torch::Tensor features;      // B x C_t, globally pooled
  BNStatistics batch_stats;    // empty unless captured
};

// Frozen pretrained feature extractor with its input normalization.
class Teacher {
 public:
  static constexpr std::array<double, 3> kImageNetMean = {0.485, 0.456, 0.406};
  static constexpr std::array<double, 3> kImageNetStd = {0.229, 0.224, 0.225};

  explicit Teacher(const ArchSpec& arch, std::array<double, 3> norm_mean = kImageNetMean,
                   std::array<double, 3> norm_std = kImageNetStd);

  // Expects raw-pixel images; normalization happens here. With capture on,
  // per-layer batch moments are recorded while the running statistics keep
  // driving the normalization. Capture needs a batch of at least 2.
  TeacherOutput forward(const torch::Tensor& images, bool capture = true);

  BNStatistics running_stats() const;
  int64_t feature_dim() const { return backbone_->feature_dim(); }
  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  const std::array<double, 3>& norm_mean() const { return norm_mean_; }
  const std::array<double, 3>& norm_std() const { return norm_std_; }

  void set_trainable(bool trainable);
  bool trainable() const { return trainable_; }

  // Marks the teacher as the frozen source of a distillation run; fine-tuning
  // is refused from then on.
  void lock_for_distillation();
  bool locked_for_distillation() const { return locked_; }

  // Re-estimates running statistics as a cumulative average over `batches`.
  void calibrate_running_stats(const std::vector<torch::Tensor>& batches);

  void to(torch::Dtype dtype);

 private:
  torch::Tensor normalize(const torch::Tensor& images) const;

  Backbone backbone_;
  std::array<double, 3> norm_mean_;
  std::array<double, 3> norm_std_;
  bool trainable_ = false;
  bool locked_ = false;
};

struct StudentOutput {
  torch::Tensor logits;      // B x K
  torch::Tensor projection;  // B x C_t
};

// Trainable backbone with a K-way classifier and a 2-layer MLP projection
// to the teacher's feature dimension.
class StudentNetImpl : public torch::nn::Module {
 public:
  StudentNetImpl(const ArchSpec& arch, int64_t num_classes, int64_t projection_dim);

  StudentOutput forward(const torch::Tensor& images);

  void train(bool on = true) override;

  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  torch::nn::Linear& classifier() { return classifier_; }
  torch::nn::Sequential& projection() { return projection_; }
  int64_t num_classes() const { return num_classes_; }
  int64_t projection_dim() const { return projection_dim_; }

  void set_input_normalization(const std::array<double, 3>& mean, const std::array<double, 3>& std);
  void reset_classifier(bool zero = false);
  // With a frozen backbone, train() keeps the backbone (and its BN) in eval.
  void set_backbone_frozen(bool frozen);
  bool backbone_frozen() const { return backbone_frozen_; }

 private:
  Backbone backbone_{nullptr};
  torch::nn::Linear classifier_{nullptr};
  torch::nn::Sequential projection_{nullptr};
  torch::Tensor input_mean_;
  torch::Tensor input_std_;
  int64_t num_classes_;
  int64_t projection_dim_;
  bool backbone_frozen_ = false;
};

TORCH_MODULE(StudentNet);

void set_transfer_mode(StudentNet& student, TransferMode mode);
void set_transfer_mode(Teacher& teacher, TransferMode mode);

// A classifier over the teacher's backbone (weights copied), for linear
// probing and fine-tuning baselines.
StudentNet make_probe_model(const Teacher& teacher, int64_t num_classes, TransferMode mode);

int64_t trainable_parameter_count(const torch::nn::Module& module);
int64_t parameter_count(const torch::nn::Module& module);

// FNV-1a over every parameter and buffer (names and raw bytes).
uint64_t state_hash(const torch::nn::Module& module);

// Copies parameters and buffers by name; shapes must match.
void copy_state(const torch::nn::Module& source, torch::nn::Module& destination);

}  // namespace fopro

#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "fopro/fpg.hpp"
#include "fopro/models.hpp"

namespace fopro {

inline constexpr const char* kCheckpointFormat = "fopro-ckpt-v1";

// Self-describing checkpoint archive. Every file carries meta/format,
// meta/role, meta/arch and meta/config_hash; module tensors live under
// "<prefix>/params/<name>" and "<prefix>/buffers/<name>".
class CheckpointWriter {
 public:
  CheckpointWriter(const std::string& role, const std::string& arch, const std::string& config_hash);

  void write_string(const std::string& key, const std::string& value);
  void write_int(const std::string& key, int64_t value);
  void write_double(const std::string& key, double value);
  void write_tensor(const std::string& key, const torch::Tensor& value);
  void write_module(const std::string& prefix, const torch::nn::Module& module);
  void write_optimizer(const std::string& key, const torch::optim::Optimizer& optimizer);

  // Writes to a temporary sibling and renames, so readers never see a torn file.
  void save(const std::filesystem::path& path);

 private:
  torch::serialize::OutputArchive archive_;
};

class CheckpointReader {
 public:
  // Throws CheckpointError when the file is missing, unreadable, or not a
  // checkpoint of this format.
  explicit CheckpointReader(const std::filesystem::path& path);

  bool has(const std::string& key);
  std::string read_string(const std::string& key);
  int64_t read_int(const std::string& key);
  double read_double(const std::string& key);
  torch::Tensor read_tensor(const std::string& key);
  void read_module(const std::string& prefix, torch::nn::Module& module);
  void read_optimizer(const std::string& key, torch::optim::Optimizer& optimizer);

  const std::string& role() const { return role_; }
  const std::string& arch() const { return arch_; }
  const std::string& config_hash() const { return config_hash_; }

 private:
  std::filesystem::path path_;
  torch::serialize::InputArchive archive_;
  std::string role_;
  std::string arch_;
  std::string config_hash_;
};

void save_teacher(const std::filesystem::path& path, const Teacher& teacher,
                  const std::string& config_hash = "");
Teacher load_teacher(const std::filesystem::path& path);

void save_student(const std::filesystem::path& path, const StudentNet& student,
                  const std::string& config_hash = "");
StudentNet load_student(const std::filesystem::path& path);

void save_prompt_generator(const std::filesystem::path& path, const PromptGenerator& fpg,
                           const std::string& config_hash = "");
PromptGenerator load_prompt_generator(const std::filesystem::path& path);

}  // namespace fopro

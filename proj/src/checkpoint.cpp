#include "fopro/checkpoint.hpp"

#include <cstring>

#include "fopro/errors.hpp"

namespace fopro {

namespace fs = std::filesystem;

CheckpointWriter::CheckpointWriter(const std::string& role, const std::string& arch,
                                   const std::string& config_hash) {
  write_string("meta/format", kCheckpointFormat);
  write_string("meta/role", role);
  write_string("meta/arch", arch);
  write_string("meta/config_hash", config_hash);
}

void CheckpointWriter::write_string(const std::string& key, const std::string& value) {
  auto t = torch::empty({static_cast<int64_t>(value.size())}, torch::kInt8);
  if (!value.empty()) std::memcpy(t.data_ptr<int8_t>(), value.data(), value.size());
  archive_.write(key, t);
}

void CheckpointWriter::write_int(const std::string& key, int64_t value) {
  archive_.write(key, torch::tensor({value}, torch::kInt64));
}

void CheckpointWriter::write_double(const std::string& key, double value) {
  archive_.write(key, torch::tensor({value}, torch::kFloat64));
}

void CheckpointWriter::write_tensor(const std::string& key, const torch::Tensor& value) {
  archive_.write(key, value.detach().cpu());
}

void CheckpointWriter::write_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters()) {
    archive_.write(prefix + "/params/" + item.key(), item.value().detach());
  }
  for (const auto& item : module.named_buffers()) {
    archive_.write(prefix + "/buffers/" + item.key(), item.value().detach(), /*is_buffer=*/true);
  }
}

void CheckpointWriter::write_optimizer(const std::string& key, const torch::optim::Optimizer& optimizer) {
  torch::serialize::OutputArchive nested;
  optimizer.save(nested);
  archive_.write(key, nested);
}

void CheckpointWriter::save(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  try {
    archive_.save_to(tmp.string());
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  fs::rename(tmp, path);
}

CheckpointReader::CheckpointReader(const fs::path& path) : path_(path) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  try {
    archive_.load_from(path.string());
  } catch (const c10::Error& e) {
    throw CheckpointError("corrupt or unreadable checkpoint " + path.string() + ": " +
                          e.what_without_backtrace());
  }
  if (!has("meta/format") || read_string("meta/format") != kCheckpointFormat) {
    throw CheckpointError("not a " + std::string(kCheckpointFormat) + " checkpoint: " + path.string());
  }
  role_ = read_string("meta/role");
  arch_ = read_string("meta/arch");
  config_hash_ = read_string("meta/config_hash");
}

bool CheckpointReader::has(const std::string& key) {
  torch::Tensor t;
  return archive_.try_read(key, t);
}

torch::Tensor CheckpointReader::read_tensor(const std::string& key) {
  torch::Tensor t;
  if (!archive_.try_read(key, t)) {
    throw CheckpointError("checkpoint " + path_.string() + " is missing '" + key + "'");
  }
  return t;
}

std::string CheckpointReader::read_string(const std::string& key) {
  const auto t = read_tensor(key).contiguous();
  std::string s(static_cast<std::size_t>(t.numel()), '\0');
  if (t.numel() > 0) std::memcpy(s.data(), t.data_ptr<int8_t>(), s.size());
  return s;
}

int64_t CheckpointReader::read_int(const std::string& key) { return read_tensor(key).item<int64_t>(); }

double CheckpointReader::read_double(const std::string& key) { return read_tensor(key).item<double>(); }

void CheckpointReader::read_module(const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto load_into = [&](const std::string& key, torch::Tensor& dst) {
    const auto src = read_tensor(key);
    if (src.sizes() != dst.sizes()) {
      throw CheckpointError("shape mismatch for '" + key + "' in " + path_.string());
    }
    dst.copy_(src);
  };
  for (auto& item : module.named_parameters()) load_into(prefix + "/params/" + item.key(), item.value());
  for (auto& item : module.named_buffers()) load_into(prefix + "/buffers/" + item.key(), item.value());
}

void CheckpointReader::read_optimizer(const std::string& key, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive nested;
  if (!archive_.try_read(key, nested)) {
    throw CheckpointError("checkpoint " + path_.string() + " is missing optimizer '" + key + "'");
  }
  optimizer.load(nested);
}

// ---------------------------------------------------------------- typed helpers

namespace {

void require_role(const CheckpointReader& reader, const std::string& role, const fs::path& path) {
  if (reader.role() != role) {
    throw CheckpointError(path.string() + " holds a '" + reader.role() + "' checkpoint, expected '" +
                          role + "'");
  }
}

std::array<double, 3> to_array3(const torch::Tensor& t) {
  const auto d = t.to(torch::kFloat64).contiguous();
  if (d.numel() != 3) throw CheckpointError("normalization constants must have 3 entries");
  return {d[0].item<double>(), d[1].item<double>(), d[2].item<double>()};
}

torch::Tensor from_array3(const std::array<double, 3>& a) {
  return torch::tensor(std::vector<double>(a.begin(), a.end()), torch::kFloat64);
}

}  // namespace

void save_teacher(const fs::path& path, const Teacher& teacher, const std::string& config_hash) {
  CheckpointWriter w("teacher", teacher.backbone()->arch().to_string(), config_hash);
  w.write_tensor("meta/norm_mean", from_array3(teacher.norm_mean()));
  w.write_tensor("meta/norm_std", from_array3(teacher.norm_std()));
  w.write_int("meta/feature_dim", teacher.feature_dim());
  w.write_module("backbone", *teacher.backbone());
  w.save(path);
}

Teacher load_teacher(const fs::path& path) {
  CheckpointReader r(path);
  require_role(r, "teacher", path);
  Teacher teacher(ArchSpec::parse(r.arch()), to_array3(r.read_tensor("meta/norm_mean")),
                  to_array3(r.read_tensor("meta/norm_std")));
  r.read_module("backbone", *teacher.backbone());
  if (r.read_int("meta/feature_dim") != teacher.feature_dim()) {
    throw CheckpointError("teacher feature dimension disagrees with its architecture");
  }
  return teacher;
}

void save_student(const fs::path& path, const StudentNet& student, const std::string& config_hash) {
  CheckpointWriter w("student", student->backbone()->arch().to_string(), config_hash);
  w.write_int("meta/num_classes", student->num_classes());
  w.write_int("meta/projection_dim", student->projection_dim());
  w.write_int("meta/backbone_frozen", student->backbone_frozen() ? 1 : 0);
  w.write_module("student", *student);
  w.save(path);
}

StudentNet load_student(const fs::path& path) {
  CheckpointReader r(path);
  require_role(r, "student", path);
  StudentNet student(ArchSpec::parse(r.arch()), r.read_int("meta/num_classes"),
                     r.read_int("meta/projection_dim"));
  r.read_module("student", *student);
  if (r.read_int("meta/backbone_frozen") != 0) student->set_backbone_frozen(true);
  return student;
}

void save_prompt_generator(const fs::path& path, const PromptGenerator& fpg,
                           const std::string& config_hash) {
  const auto& o = fpg->options();
  CheckpointWriter w("fpg", "linear", config_hash);
  w.write_int("meta/noise_dim", o.noise_dim);
  w.write_int("meta/channels", o.channels);
  w.write_int("meta/height", o.height);
  w.write_int("meta/width", o.width);
  w.write_module("fpg", *fpg);
  w.save(path);
}

PromptGenerator load_prompt_generator(const fs::path& path) {
  CheckpointReader r(path);
  require_role(r, "fpg", path);
  PromptGeneratorOptions o;
  o.noise_dim = r.read_int("meta/noise_dim");
  o.channels = r.read_int("meta/channels");
  o.height = r.read_int("meta/height");
  o.width = r.read_int("meta/width");
  PromptGenerator fpg(o);
  r.read_module("fpg", *fpg);
  return fpg;
}

}  // namespace fopro

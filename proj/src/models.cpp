#include "fopro/models.hpp"

#include <sstream>

#include "fopro/errors.hpp"

namespace fopro {

namespace nn = torch::nn;

std::string ArchSpec::to_string() const {
  std::ostringstream os;
  os << name;
  if (name == "toy_cnn") {
    os << ':';
    for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
  }
  return os.str();
}

ArchSpec ArchSpec::parse(const std::string& text) {
  ArchSpec spec;
  const auto colon = text.find(':');
  spec.name = text.substr(0, colon);
  spec.widths.clear();
  if (colon != std::string::npos) {
    std::istringstream is(text.substr(colon + 1));
    std::string item;
    while (std::getline(is, item, ',')) spec.widths.push_back(std::stoll(item));
  }
  return spec;
}

namespace {

torch::Tensor observed_bn(nn::BatchNorm2d& bn, const torch::Tensor& x, BNStatistics* capture) {
  if (capture != nullptr) {
    capture->push_back({x.mean({0, 2, 3}), x.var({0, 2, 3}, /*unbiased=*/false)});
  }
  return bn->forward(x);
}

nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1, int64_t padding = 0) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false));
}

// conv3x3 -> BN -> ReLU, optionally followed by 2x2 max pooling.
class ConvStageImpl : public BackboneBlockImpl {
 public:
  ConvStageImpl(int64_t in, int64_t out, bool pool) : pool_(pool) {
    conv_ = register_module("conv", conv(in, out, 3, 1, 1));
    bn_ = register_module("bn", nn::BatchNorm2d(out));
  }
  torch::Tensor forward(torch::Tensor x, BNStatistics* capture) override {
    x = torch::relu(observed_bn(bn_, conv_->forward(x), capture));
    return pool_ ? torch::max_pool2d(x, 2) : x;
  }
  nn::BatchNorm2d& bn() { return bn_; }

 private:
  nn::Conv2d conv_{nullptr};
  nn::BatchNorm2d bn_{nullptr};
  bool pool_;
};

// 1x1 strided projection on the residual path, named like torchvision's.
class DownsampleImpl : public nn::Module {
 public:
  DownsampleImpl(int64_t in, int64_t out, int64_t stride) {
    conv_ = register_module("0", conv(in, out, 1, stride));
    bn_ = register_module("1", nn::BatchNorm2d(out));
  }
  torch::Tensor forward(const torch::Tensor& x, BNStatistics* capture) {
    return observed_bn(bn_, conv_->forward(x), capture);
  }
  nn::BatchNorm2d& bn() { return bn_; }

 private:
  nn::Conv2d conv_{nullptr};
  nn::BatchNorm2d bn_{nullptr};
};

class StemImpl : public BackboneBlockImpl {
 public:
  explicit StemImpl(int64_t in) {
    conv1_ = register_module("conv1", conv(in, 64, 7, 2, 3));
    bn1_ = register_module("bn1", nn::BatchNorm2d(64));
  }
  torch::Tensor forward(torch::Tensor x, BNStatistics* capture) override {
    x = torch::relu(observed_bn(bn1_, conv1_->forward(x), capture));
    return torch::max_pool2d(x, 3, 2, 1);
  }
  nn::BatchNorm2d& bn1() { return bn1_; }

 private:
  nn::Conv2d conv1_{nullptr};
  nn::BatchNorm2d bn1_{nullptr};
};

class BasicBlockImpl : public BackboneBlockImpl {
 public:
  static constexpr int64_t kExpansion = 1;

  BasicBlockImpl(int64_t in, int64_t planes, int64_t stride) {
    conv1_ = register_module("conv1", conv(in, planes, 3, stride, 1));
    bn1_ = register_module("bn1", nn::BatchNorm2d(planes));
    conv2_ = register_module("conv2", conv(planes, planes, 3, 1, 1));
    bn2_ = register_module("bn2", nn::BatchNorm2d(planes));
    if (stride != 1 || in != planes) {
      downsample_ = std::make_shared<DownsampleImpl>(in, planes, stride);
      register_module("downsample", downsample_);
    }
  }
  torch::Tensor forward(torch::Tensor x, BNStatistics* capture) override {
    auto out = torch::relu(observed_bn(bn1_, conv1_->forward(x), capture));
    out = observed_bn(bn2_, conv2_->forward(out), capture);
    const auto identity = downsample_ ? downsample_->forward(x, capture) : x;
    return torch::relu(out + identity);
  }
  std::vector<nn::BatchNorm2d> bns() const {
    std::vector<nn::BatchNorm2d> v{bn1_, bn2_};
    if (downsample_) v.push_back(downsample_->bn());
    return v;
  }

 private:
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
  std::shared_ptr<DownsampleImpl> downsample_;
};

class BottleneckImpl : public BackboneBlockImpl {
 public:
  static constexpr int64_t kExpansion = 4;

  BottleneckImpl(int64_t in, int64_t planes, int64_t stride) {
    conv1_ = register_module("conv1", conv(in, planes, 1));
    bn1_ = register_module("bn1", nn::BatchNorm2d(planes));
    conv2_ = register_module("conv2", conv(planes, planes, 3, stride, 1));
    bn2_ = register_module("bn2", nn::BatchNorm2d(planes));
    conv3_ = register_module("conv3", conv(planes, planes * kExpansion, 1));
    bn3_ = register_module("bn3", nn::BatchNorm2d(planes * kExpansion));
    if (stride != 1 || in != planes * kExpansion) {
      downsample_ = std::make_shared<DownsampleImpl>(in, planes * kExpansion, stride);
      register_module("downsample", downsample_);
    }
  }
  torch::Tensor forward(torch::Tensor x, BNStatistics* capture) override {
    auto out = torch::relu(observed_bn(bn1_, conv1_->forward(x), capture));
    out = torch::relu(observed_bn(bn2_, conv2_->forward(out), capture));
    out = observed_bn(bn3_, conv3_->forward(out), capture);
    const auto identity = downsample_ ? downsample_->forward(x, capture) : x;
    return torch::relu(out + identity);
  }
  std::vector<nn::BatchNorm2d> bns() const {
    std::vector<nn::BatchNorm2d> v{bn1_, bn2_, bn3_};
    if (downsample_) v.push_back(downsample_->bn());
    return v;
  }

 private:
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
  std::shared_ptr<DownsampleImpl> downsample_;
};

template <typename Block>
int64_t add_resnet_layers(std::vector<std::shared_ptr<BackboneBlockImpl>>& blocks,
                          std::vector<nn::BatchNorm2d>& bns, nn::Module& owner,
                          const std::array<int64_t, 4>& depths) {
  int64_t in = 64;
  const std::array<int64_t, 4> planes = {64, 128, 256, 512};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    nn::ModuleList layer;
    for (int64_t i = 0; i < depths[stage]; ++i) {
      const int64_t stride = (stage > 0 && i == 0) ? 2 : 1;
      auto block = std::make_shared<Block>(in, planes[stage], stride);
      in = planes[stage] * Block::kExpansion;
      layer->push_back(block);
      blocks.push_back(block);
      for (auto& bn : block->bns()) bns.push_back(bn);
    }
    owner.register_module("layer" + std::to_string(stage + 1), layer);
  }
  return in;
}

}  // namespace

BackboneImpl::BackboneImpl(const ArchSpec& arch, int64_t in_channels) : arch_(arch) {
  if (arch.name == "toy_cnn") {
    if (arch.widths.empty()) throw InvalidArgument("toy_cnn needs at least one stage width");
    int64_t in = in_channels;
    for (std::size_t i = 0; i < arch.widths.size(); ++i) {
      const bool last = i + 1 == arch.widths.size();
      auto stage = std::make_shared<ConvStageImpl>(in, arch.widths[i], !last);
      register_module("stage" + std::to_string(i), stage);
      blocks_.push_back(stage);
      bn_layers_.push_back(stage->bn());
      in = arch.widths[i];
    }
    feature_dim_ = in;
  } else if (arch.name == "resnet18" || arch.name == "resnet50") {
    auto stem = std::make_shared<StemImpl>(in_channels);
    register_module("stem", stem);
    blocks_.push_back(stem);
    bn_layers_.push_back(stem->bn1());
    feature_dim_ = arch.name == "resnet18"
                       ? add_resnet_layers<BasicBlockImpl>(blocks_, bn_layers_, *this, {2, 2, 2, 2})
                       : add_resnet_layers<BottleneckImpl>(blocks_, bn_layers_, *this, {3, 4, 6, 3});
  } else {
    throw InvalidArgument("unknown backbone architecture '" + arch.name + "'");
  }
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& x, BNStatistics* capture) {
  auto h = x;
  for (auto& block : blocks_) h = block->forward(h, capture);
  return h.mean({2, 3});
}

const char* to_string(TransferMode mode) {
  switch (mode) {
    case TransferMode::linear_probe: return "linear_probe";
    case TransferMode::fine_tune: return "fine_tune";
    case TransferMode::distill_student: return "distill_student";
  }
  return "?";
}

// ---------------------------------------------------------------- Teacher

Teacher::Teacher(const ArchSpec& arch, std::array<double, 3> norm_mean, std::array<double, 3> norm_std)
    : backbone_(arch), norm_mean_(norm_mean), norm_std_(norm_std) {
  set_trainable(false);
}

torch::Tensor Teacher::normalize(const torch::Tensor& images) const {
  const auto opts = images.options().requires_grad(false);
  const auto mean = torch::tensor(std::vector<double>(norm_mean_.begin(), norm_mean_.end()), opts);
  const auto std = torch::tensor(std::vector<double>(norm_std_.begin(), norm_std_.end()), opts);
  return (images - mean.view({1, 3, 1, 1})) / std.view({1, 3, 1, 1});
}

TeacherOutput Teacher::forward(const torch::Tensor& images, bool capture) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw InvalidInput("Teacher::forward: expected B x 3 x H x W images");
  }
  if (capture && images.size(0) < 2) {
    throw InvalidInput("Teacher::forward: statistics capture needs a batch of at least 2");
  }
  TeacherOutput out;
  out.features = backbone_->forward(normalize(images), capture ? &out.batch_stats : nullptr);
  return out;
}

BNStatistics Teacher::running_stats() const {
  BNStatistics stats;
  for (const auto& bn : backbone_->bn_layers()) {
    stats.push_back({bn->running_mean.detach(), bn->running_var.detach()});
  }
  return stats;
}

void Teacher::set_trainable(bool trainable) {
  for (auto& p : backbone_->parameters()) p.set_requires_grad(trainable);
  backbone_->train(trainable);
  trainable_ = trainable;
}

void Teacher::lock_for_distillation() {
  set_trainable(false);
  locked_ = true;
}

void Teacher::calibrate_running_stats(const std::vector<torch::Tensor>& batches) {
  if (locked_) throw ContractViolation("calibrate_running_stats: teacher is locked for distillation");
  torch::NoGradGuard no_grad;
  std::vector<std::optional<double>> momenta;
  for (auto bn : backbone_->bn_layers()) {
    momenta.push_back(bn->options.momentum());
    bn->options.momentum(std::nullopt);  // cumulative moving average
    bn->reset_running_stats();
  }
  backbone_->train(true);
  for (const auto& batch : batches) backbone_->forward(normalize(batch));
  std::size_t i = 0;
  for (auto bn : backbone_->bn_layers()) bn->options.momentum(momenta[i++]);
  backbone_->train(trainable_);
}

void Teacher::to(torch::Dtype dtype) { backbone_->to(dtype); }

// ---------------------------------------------------------------- Student

StudentNetImpl::StudentNetImpl(const ArchSpec& arch, int64_t num_classes, int64_t projection_dim)
    : num_classes_(num_classes), projection_dim_(projection_dim) {
  if (num_classes < 2) throw InvalidArgument("StudentNet: need at least 2 classes");
  if (projection_dim < 1) throw InvalidArgument("StudentNet: projection dimension must be positive");
  backbone_ = register_module("backbone", Backbone(arch));
  const int64_t features = backbone_->feature_dim();
  classifier_ = register_module("classifier", nn::Linear(features, num_classes));
  projection_ = register_module(
      "projection", nn::Sequential(nn::Linear(features, projection_dim), nn::ReLU(),
                                   nn::Linear(projection_dim, projection_dim)));
  input_mean_ = register_buffer("input_mean", torch::zeros({1, 3, 1, 1}));
  input_std_ = register_buffer("input_std", torch::ones({1, 3, 1, 1}));
}

StudentOutput StudentNetImpl::forward(const torch::Tensor& images) {
  const auto features = backbone_->forward((images - input_mean_) / input_std_);
  return {classifier_->forward(features), projection_->forward(features)};
}

void StudentNetImpl::train(bool on) {
  torch::nn::Module::train(on);
  if (backbone_frozen_) backbone_->train(false);
}

void StudentNetImpl::set_input_normalization(const std::array<double, 3>& mean,
                                             const std::array<double, 3>& std) {
  torch::NoGradGuard no_grad;
  for (int c = 0; c < 3; ++c) {
    input_mean_.view(-1)[c].fill_(mean[c]);
    input_std_.view(-1)[c].fill_(std[c]);
  }
}

void StudentNetImpl::reset_classifier(bool zero) {
  classifier_->reset_parameters();
  if (zero) {
    torch::NoGradGuard no_grad;
    classifier_->weight.zero_();
    classifier_->bias.zero_();
  }
}

void StudentNetImpl::set_backbone_frozen(bool frozen) {
  backbone_frozen_ = frozen;
  for (auto& p : backbone_->parameters()) p.set_requires_grad(!frozen);
  if (frozen) backbone_->train(false);
}

// ---------------------------------------------------------------- modes

void set_transfer_mode(StudentNet& student, TransferMode mode) {
  switch (mode) {
    case TransferMode::linear_probe:
      student->set_backbone_frozen(true);
      for (auto& p : student->projection()->parameters()) p.set_requires_grad(false);
      student->reset_classifier();
      for (auto& p : student->classifier()->parameters()) p.set_requires_grad(true);
      break;
    case TransferMode::fine_tune:
    case TransferMode::distill_student:
      student->set_backbone_frozen(false);
      for (auto& p : student->parameters()) p.set_requires_grad(true);
      break;
  }
}

void set_transfer_mode(Teacher& teacher, TransferMode mode) {
  switch (mode) {
    case TransferMode::fine_tune:
      if (teacher.locked_for_distillation()) {
        throw ContractViolation("fine_tune requested on a teacher that is frozen for distillation");
      }
      teacher.set_trainable(true);
      break;
    case TransferMode::linear_probe:
    case TransferMode::distill_student:
      teacher.set_trainable(false);
      break;
  }
}

StudentNet make_probe_model(const Teacher& teacher, int64_t num_classes, TransferMode mode) {
  if (mode == TransferMode::distill_student) {
    throw InvalidArgument("make_probe_model: use linear_probe or fine_tune");
  }
  StudentNet model(teacher.backbone()->arch(), num_classes, teacher.feature_dim());
  copy_state(*teacher.backbone(), *model->backbone());
  model->set_input_normalization(teacher.norm_mean(), teacher.norm_std());
  set_transfer_mode(model, mode);
  return model;
}

// ---------------------------------------------------------------- utilities

int64_t trainable_parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) {
    if (p.requires_grad()) n += p.numel();
  }
  return n;
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

namespace {

constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(uint64_t& h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

void hash_tensor(uint64_t& h, const std::string& name, const torch::Tensor& t) {
  fnv_mix(h, name.data(), name.size());
  const auto c = t.detach().contiguous();
  fnv_mix(h, c.data_ptr(), c.numel() * c.element_size());
}

}  // namespace

uint64_t state_hash(const torch::nn::Module& module) {
  uint64_t h = kFnvOffset;
  for (const auto& item : module.named_parameters()) hash_tensor(h, item.key(), item.value());
  for (const auto& item : module.named_buffers()) hash_tensor(h, item.key(), item.value());
  return h;
}

void copy_state(const torch::nn::Module& source, torch::nn::Module& destination) {
  torch::NoGradGuard no_grad;
  auto src_params = source.named_parameters();
  auto src_buffers = source.named_buffers();
  for (auto& item : destination.named_parameters()) {
    const auto* src = src_params.find(item.key());
    if (src == nullptr || src->sizes() != item.value().sizes()) {
      throw ContractViolation("copy_state: parameter '" + item.key() + "' missing or mismatched");
    }
    item.value().copy_(*src);
  }
  for (auto& item : destination.named_buffers()) {
    const auto* src = src_buffers.find(item.key());
    if (src == nullptr || src->sizes() != item.value().sizes()) {
      throw ContractViolation("copy_state: buffer '" + item.key() + "' missing or mismatched");
    }
    item.value().copy_(*src);
  }
}

}  // namespace fopro

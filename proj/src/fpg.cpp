#include "fopro/fpg.hpp"

#include "fopro/errors.hpp"

namespace fopro {

PromptGeneratorImpl::PromptGeneratorImpl(const PromptGeneratorOptions& options) : options_(options) {
  if (options.noise_dim < 1 || options.channels < 1 || options.height < 1 || options.width < 1) {
    throw InvalidArgument("PromptGenerator: all dimensions must be positive");
  }
  const int64_t out = options.channels * options.height * options.width;
  linear_ = register_module("linear", torch::nn::Linear(options.noise_dim, out));

  auto gen = at::make_generator<at::CPUGeneratorImpl>(options.init_seed);
  torch::NoGradGuard no_grad;
  linear_->weight.normal_(0.0, options.init_weight_std, gen);
  linear_->bias.fill_(options.init_bias);
}

spectral::FourierPrompt PromptGeneratorImpl::forward(const torch::Tensor& noise) {
  if (noise.dim() != 1 || noise.size(0) != options_.noise_dim) {
    throw InvalidArgument("PromptGenerator: expected a noise vector of length " +
                          std::to_string(options_.noise_dim));
  }
  const auto raw = linear_->forward(noise.unsqueeze(0))
                       .view({options_.channels, options_.height, options_.width});
  return spectral::hermitian_project(raw);
}

torch::Tensor sample_noise(int64_t dim, at::Generator& generator, torch::Dtype dtype) {
  if (dim < 1) throw InvalidArgument("sample_noise: dimension must be positive");
  return torch::randn({dim}, generator, torch::TensorOptions().dtype(dtype));
}

}  // namespace fopro

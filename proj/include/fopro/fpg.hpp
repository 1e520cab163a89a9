#pragma once

#include <torch/torch.h>

#include "fopro/spectral.hpp"

namespace fopro {

struct PromptGeneratorOptions {
  int64_t noise_dim = 128;
  int64_t channels = 3;
  int64_t height = 32;
  int64_t width = 32;
  double init_weight_std = 0.01;
  double init_bias = 1.0;
  uint64_t init_seed = 0;
};

// One linear layer from a noise vector to a full-resolution amplitude
// prompt, followed by the Hermitian projection.
class PromptGeneratorImpl : public torch::nn::Module {
 public:
  explicit PromptGeneratorImpl(const PromptGeneratorOptions& options);

  spectral::FourierPrompt forward(const torch::Tensor& noise);

  const PromptGeneratorOptions& options() const { return options_; }
  torch::nn::Linear& linear() { return linear_; }

 private:
  PromptGeneratorOptions options_;
  torch::nn::Linear linear_{nullptr};
};

TORCH_MODULE(PromptGenerator);

// Standard-normal noise vector of length `dim`, drawn from `generator`.
torch::Tensor sample_noise(int64_t dim, at::Generator& generator,
                           torch::Dtype dtype = torch::kFloat32);

}  // namespace fopro

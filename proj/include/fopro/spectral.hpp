#pragma once

#include <torch/torch.h>

namespace fopro::spectral {

// Amplitude/phase of the unnormalized 2-D DFT of a real image batch.
// Both tensors are B x C x H x W; phase lies in (-pi, pi].
struct SpectralDecomposition {
  torch::Tensor amplitude;
  torch::Tensor phase;
};

// A nonnegative amplitude spectrum, C x H x W in unshifted DFT coordinates,
// that is Hermitian-symmetric per channel. Only hermitian_project creates one.
class FourierPrompt {
 public:
  const torch::Tensor& delta() const { return delta_; }
  int64_t channels() const { return delta_.size(0); }
  int64_t height() const { return delta_.size(1); }
  int64_t width() const { return delta_.size(2); }

 private:
  explicit FourierPrompt(torch::Tensor delta) : delta_(std::move(delta)) {}
  friend FourierPrompt hermitian_project(const torch::Tensor& raw);

  torch::Tensor delta_;
};

SpectralDecomposition decompose(const torch::Tensor& images);

// a[..., u, v] -> a[..., (H-u) mod H, (W-v) mod W]
torch::Tensor hermitian_mirror(const torch::Tensor& spectrum);

// max |a - mirror(a)| relative to max |a|; 0 for an all-zero spectrum.
double hermitian_asymmetry(const torch::Tensor& spectrum);

// (|raw| + mirror(|raw|)) / 2. Differentiable almost everywhere.
FourierPrompt hermitian_project(const torch::Tensor& raw);

// alpha * A + (1 - alpha) * delta with one alpha per batch element.
torch::Tensor mix_amplitude(const torch::Tensor& amplitude, const FourierPrompt& prompt,
                            const torch::Tensor& alpha);

struct Reconstruction {
  torch::Tensor image;
  double max_imag_residual = 0.0;
};

// Inverse DFT of amplitude * exp(i * phase). The imaginary part is measured and
// dropped; the real image is not clamped.
Reconstruction reconstruct_with_residual(const torch::Tensor& amplitude, const torch::Tensor& phase);
torch::Tensor reconstruct(const torch::Tensor& amplitude, const torch::Tensor& phase);

// decompose -> mix -> reconstruct. Gradients flow into the prompt and alpha;
// the source spectrum is taken from `images` as given.
torch::Tensor prompt_images(const torch::Tensor& images, const FourierPrompt& prompt,
                            const torch::Tensor& alpha);

// Display copy of a prompt: DC moved to the center, log1p-scaled, and
// min-max normalized to [0, 1] per channel.
torch::Tensor display_prompt(const FourierPrompt& prompt);

}  // namespace fopro::spectral

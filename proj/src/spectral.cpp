#include "fopro/spectral.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "fopro/errors.hpp"

namespace fopro::spectral {

namespace {

constexpr double kHermitianTolerance = 1e-4;

bool all_finite(const torch::Tensor& t) {
  return torch::isfinite(t.detach()).all().item<bool>();
}

std::string shape_string(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void require_image_batch(const torch::Tensor& images, const char* what) {
  if (images.dim() != 4) {
    throw InvalidInput(std::string(what) + ": expected B x C x H x W, got " + shape_string(images));
  }
  if (!images.is_floating_point()) {
    throw InvalidInput(std::string(what) + ": expected a floating-point tensor");
  }
}

}  // namespace

SpectralDecomposition decompose(const torch::Tensor& images) {
  require_image_batch(images, "decompose");
  if (!all_finite(images)) {
    throw InvalidInput("decompose: image batch contains non-finite values");
  }
  const auto spectrum = torch::fft::fft2(images);
  auto phase = torch::angle(spectrum);
  // atan2 yields -pi for a negative real bin with a -0 imaginary part.
  phase = torch::where(phase <= -std::numbers::pi, phase + 2.0 * std::numbers::pi, phase);
  return {torch::abs(spectrum), phase};
}

torch::Tensor hermitian_mirror(const torch::Tensor& spectrum) {
  return torch::roll(torch::flip(spectrum, {-2, -1}), {1, 1}, {-2, -1});
}

double hermitian_asymmetry(const torch::Tensor& spectrum) {
  const auto a = spectrum.detach();
  const double scale = a.abs().max().item<double>();
  if (scale == 0.0) return 0.0;
  return (a - hermitian_mirror(a)).abs().max().item<double>() / scale;
}

FourierPrompt hermitian_project(const torch::Tensor& raw) {
  if (raw.dim() != 3) {
    throw InvalidInput("hermitian_project: expected C x H x W, got " + shape_string(raw));
  }
  if (!all_finite(raw)) {
    throw InvalidInput("hermitian_project: raw prompt contains non-finite values");
  }
  const auto magnitude = raw.abs();
  return FourierPrompt((magnitude + hermitian_mirror(magnitude)) / 2.0);
}

torch::Tensor mix_amplitude(const torch::Tensor& amplitude, const FourierPrompt& prompt,
                            const torch::Tensor& alpha) {
  require_image_batch(amplitude, "mix_amplitude");
  const auto& delta = prompt.delta();
  if (amplitude.sizes().slice(1) != delta.sizes()) {
    throw InvalidArgument("mix_amplitude: amplitude " + shape_string(amplitude) +
                          " does not match prompt " + shape_string(delta));
  }
  if (alpha.dim() != 1 || alpha.size(0) != amplitude.size(0)) {
    throw InvalidArgument("mix_amplitude: need one alpha per batch element, got " +
                          shape_string(alpha));
  }
  const auto a = alpha.detach();
  if (!all_finite(a) || (a < 0).any().item<bool>() || (a > 1).any().item<bool>()) {
    throw InvalidArgument("mix_amplitude: alpha must lie in [0, 1]");
  }
  const auto w = alpha.view({-1, 1, 1, 1});
  return w * amplitude + (1.0 - w) * delta.unsqueeze(0);
}

Reconstruction reconstruct_with_residual(const torch::Tensor& amplitude, const torch::Tensor& phase) {
  require_image_batch(amplitude, "reconstruct");
  if (amplitude.sizes() != phase.sizes()) {
    throw InvalidArgument("reconstruct: amplitude " + shape_string(amplitude) + " vs phase " +
                          shape_string(phase));
  }
  const double asymmetry = hermitian_asymmetry(amplitude);
  if (asymmetry > kHermitianTolerance) {
    throw ContractViolation("reconstruct: amplitude is not Hermitian-symmetric (relative asymmetry " +
                            std::to_string(asymmetry) + ")");
  }
  const auto phase_cast = phase.to(amplitude.scalar_type());
  const auto inverse = torch::fft::ifft2(torch::polar(amplitude, phase_cast));
  Reconstruction out;
  out.max_imag_residual = torch::imag(inverse).detach().abs().max().item<double>();
  out.image = torch::real(inverse);
  return out;
}

torch::Tensor reconstruct(const torch::Tensor& amplitude, const torch::Tensor& phase) {
  return reconstruct_with_residual(amplitude, phase).image;
}

torch::Tensor prompt_images(const torch::Tensor& images, const FourierPrompt& prompt,
                            const torch::Tensor& alpha) {
  const auto parts = decompose(images);
  return reconstruct(mix_amplitude(parts.amplitude, prompt, alpha), parts.phase);
}

torch::Tensor display_prompt(const FourierPrompt& prompt) {
  auto shown = torch::log1p(torch::fft::fftshift(prompt.delta().detach(), {-2, -1}));
  const auto flat = shown.flatten(1);
  const auto lo = std::get<0>(flat.min(1)).view({-1, 1, 1});
  const auto hi = std::get<0>(flat.max(1)).view({-1, 1, 1});
  const auto span = (hi - lo).clamp_min(1e-12);
  return (shown - lo) / span;
}

}  // namespace fopro::spectral

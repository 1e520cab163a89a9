#include "fopro/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "fopro/errors.hpp"

namespace fopro::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double gaussian(std::mt19937_64& rng) {
  const double u1 = std::max(uniform01(rng), 1e-300);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

// HSV with fixed saturation/value to RGB.
std::array<double, 3> hue_to_rgb(double hue, double saturation, double value) {
  hue -= std::floor(hue);
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = value * (1.0 - saturation);
  const double q = value * (1.0 - saturation * f);
  const double t = value * (1.0 - saturation * (1.0 - f));
  switch (sector) {
    case 0: return {value, t, p};
    case 1: return {q, value, p};
    case 2: return {p, value, t};
    case 3: return {p, q, value};
    case 4: return {t, p, value};
    default: return {value, p, q};
  }
}

}  // namespace

SyntheticImageGenerator::SyntheticImageGenerator(uint64_t seed, int num_classes, int64_t resolution)
    : seed_(seed), num_classes_(num_classes), resolution_(resolution) {
  if (num_classes < 2) throw InvalidArgument("synthetic dataset needs at least 2 classes");
  if (resolution < 8) throw InvalidArgument("synthetic dataset needs a resolution of at least 8");
}

double SyntheticImageGenerator::band_center(int label) const {
  // Bands spread from 1.5 cycles/image up to ~3/8 of Nyquist-limited range.
  const double top = 0.375 * static_cast<double>(resolution_);
  return 1.5 + (top - 1.5) * static_cast<double>(label) / (num_classes_ - 1);
}

torch::Tensor SyntheticImageGenerator::render(int label, int64_t index) const {
  if (label < 0 || label >= num_classes_) throw InvalidArgument("synthetic render: label out of range");
  std::mt19937_64 rng(derive_seed(seed_, static_cast<uint64_t>(label) + 1, static_cast<uint64_t>(index)));

  const double spacing = (band_center(num_classes_ - 1) - band_center(0)) / (num_classes_ - 1);
  const double freq = band_center(label) + uniform(rng, -0.35, 0.35) * spacing;
  const double theta = uniform(rng, 0.0, std::numbers::pi);
  const double phase = uniform(rng, 0.0, kTwoPi);
  const double contrast = uniform(rng, 0.15, 0.3);
  // Neighbouring hues overlap, so color alone does not identify the class.
  const double hue = (static_cast<double>(label) + uniform(rng, -0.6, 0.6)) / num_classes_;
  const auto color = hue_to_rgb(hue, uniform(rng, 0.4, 0.7), uniform(rng, 0.5, 0.8));
  const double tilt_x = uniform(rng, -0.15, 0.15);
  const double tilt_y = uniform(rng, -0.15, 0.15);

  const int64_t r = resolution_;
  auto img = torch::empty({3, r, r}, torch::kFloat32);
  auto acc = img.accessor<float, 3>();
  const double c = std::cos(theta), s = std::sin(theta);
  for (int64_t y = 0; y < r; ++y) {
    for (int64_t x = 0; x < r; ++x) {
      const double u = static_cast<double>(x) / r;
      const double v = static_cast<double>(y) / r;
      const double grating = contrast * std::sin(kTwoPi * freq * (u * c + v * s) + phase);
      const double shade = 1.0 + tilt_x * (u - 0.5) + tilt_y * (v - 0.5);
      for (int ch = 0; ch < 3; ++ch) {
        const double value = color[ch] * shade + grating + 0.04 * gaussian(rng);
        acc[ch][y][x] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return img;
}

std::string SyntheticImageGenerator::key(int label, int64_t index) {
  return "synthetic:" + std::to_string(label) + ":" + std::to_string(index);
}

bool SyntheticImageGenerator::parse_key(const std::string& path, int& label, int64_t& index) {
  constexpr std::string_view prefix = "synthetic:";
  if (path.rfind(prefix, 0) != 0) return false;
  const auto rest = path.substr(prefix.size());
  const auto colon = rest.find(':');
  if (colon == std::string::npos) return false;
  try {
    label = std::stoi(rest.substr(0, colon));
    index = std::stoll(rest.substr(colon + 1));
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

DatasetManifest synthetic_full_manifest(const LongTailSpec& spec) {
  DatasetManifest m;
  for (int c = 0; c < spec.num_classes(); ++c) {
    for (int64_t i = 0; i < spec.full_counts[c]; ++i) {
      m.rows.push_back({SyntheticImageGenerator::key(c, i), c, Split::unassigned});
    }
  }
  return m;
}

SyntheticDataset synthetic_dataset_generate(const LongTailSpec& spec, int64_t resolution, uint64_t seed) {
  if (spec.num_classes() < 2) throw InvalidArgument("synthetic_dataset_generate: need K >= 2");
  spec.validate();
  return {build_longtail_split(synthetic_full_manifest(spec), spec),
          SyntheticImageGenerator(seed, spec.num_classes(), resolution)};
}

ImageLoader synthetic_or_file_loader(const SyntheticImageGenerator& generator) {
  auto files = file_image_loader(generator.resolution());
  return [generator, files](const ManifestRow& row) {
    int label = 0;
    int64_t index = 0;
    if (SyntheticImageGenerator::parse_key(row.path, label, index)) return generator.render(label, index);
    return files(row);
  };
}

torch::Tensor pink_noise_images(int64_t count, int64_t resolution, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const auto white = torch::randn({count, 3, resolution, resolution}, gen, torch::kFloat64);
  const auto fy = torch::fft::fftfreq(resolution, torch::kFloat64).mul(resolution).view({-1, 1});
  const auto fx = torch::fft::fftfreq(resolution, torch::kFloat64).mul(resolution).view({1, -1});
  const auto radius = torch::sqrt(fy * fy + fx * fx).clamp_min(1.0);
  // Shared luminance component keeps the channels correlated like real photos.
  const auto luminance = white.mean(1, true);
  const auto mixed = 0.7 * luminance + 0.3 * white;
  auto img = torch::real(torch::fft::ifft2(torch::fft::fft2(mixed) / radius));
  const auto mean = img.mean({1, 2, 3}, true);
  const auto std = img.std({1, 2, 3}, true, true).clamp_min(1e-12);
  img = (img - mean) / std * 0.2 + 0.45;
  return img.clamp(0.0, 1.0).to(torch::kFloat32);
}

}  // namespace fopro::data

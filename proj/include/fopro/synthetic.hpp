#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "fopro/data.hpp"

namespace fopro::data {

// Procedural class-conditional RGB images. Class k owns a spatial-frequency
// band for an oriented grating and a hue for the color field; both carry
// per-sample jitter, and pixel noise is added on top. Each image depends only
// on (seed, class, index, resolution).
class SyntheticImageGenerator {
 public:
  SyntheticImageGenerator(uint64_t seed, int num_classes, int64_t resolution);

  // Float 3 x R x R in [0, 1].
  torch::Tensor render(int label, int64_t index) const;

  // Grating frequency band center for a class, in cycles per image.
  double band_center(int label) const;

  static std::string key(int label, int64_t index);
  // Parses "synthetic:<class>:<index>"; false for anything else.
  static bool parse_key(const std::string& path, int& label, int64_t& index);

  int64_t resolution() const { return resolution_; }

 private:
  uint64_t seed_;
  int num_classes_;
  int64_t resolution_;
};

// Unassigned rows "synthetic:<class>:<index>" for every image in full_counts.
DatasetManifest synthetic_full_manifest(const LongTailSpec& spec);

struct SyntheticDataset {
  DatasetManifest manifest;
  SyntheticImageGenerator generator;
};

SyntheticDataset synthetic_dataset_generate(const LongTailSpec& spec, int64_t resolution, uint64_t seed);

// Loader that renders synthetic keys and falls back to reading files.
ImageLoader synthetic_or_file_loader(const SyntheticImageGenerator& generator);

// Colored 1/f-spectrum noise images in [0, 1] with natural-image-like
// spectral falloff; N x 3 x R x R float.
torch::Tensor pink_noise_images(int64_t count, int64_t resolution, uint64_t seed);

}  // namespace fopro::data

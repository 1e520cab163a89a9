#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fopro/eval.hpp"

namespace fopro::data {

enum class Split { train, val, test, unassigned };

const char* to_string(Split split);
Split split_from_string(const std::string& text);

struct ManifestRow {
  std::string path;  // file path, or a "synthetic:<class>:<index>" generator key
  int label = 0;
  Split split = Split::unassigned;

  bool operator==(const ManifestRow&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;

  std::vector<int64_t> class_counts(Split split, int num_classes) const;
  std::vector<std::size_t> indices(Split split) const;
};

// CSV with header "path,label,split". A two-column "path,label" file loads
// with every row unassigned.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct LongTailSpec {
  std::vector<std::string> class_names;
  std::vector<int64_t> full_counts;
  std::vector<int64_t> train_counts;
  int64_t val_per_class = 50;
  int64_t test_per_class = 100;
  std::string imbalance_label;
  uint64_t seed = 0;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  void validate() const;
};

// Reads one row of a split-table fixture (header: split,<class names...>;
// one "Full" row plus one row per imbalance label).
LongTailSpec load_longtail_fixture(const std::filesystem::path& path, const std::string& imbalance_label);

std::filesystem::path default_fixture_path();

// Per class, a seeded shuffle picks val, then test, then the train target from
// what remains. Throws ShortfallError naming the first class that runs short.
DatasetManifest build_longtail_split(const DatasetManifest& full_manifest, const LongTailSpec& spec);

// Inverse-frequency loss weights normalized to sum to K.
std::vector<double> reweighting_weights(std::span<const int64_t> train_counts);

// Seeded draws: a class uniformly at random, then an instance of it uniformly,
// with replacement. One epoch is as long as the training set.
class ClassBalancedSampler {
 public:
  ClassBalancedSampler(std::span<const int64_t> labels, int num_classes, uint64_t seed);

  std::size_t next();
  std::vector<std::size_t> epoch();

 private:
  std::vector<std::vector<std::size_t>> by_class_;
  std::size_t epoch_length_;
  std::mt19937_64 rng_;
};

// Seeded Fisher-Yates permutation of [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, uint64_t seed);

// SplitMix64 finalizer over (seed, a, b); used to derive independent streams.
uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0);

// Decoded images as uint8 N x 3 x H x W plus labels.
struct ImageSet {
  torch::Tensor images;
  std::vector<int64_t> labels;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  // Float batch in [0, 1] and int64 labels for the given rows.
  std::pair<torch::Tensor, torch::Tensor> batch(std::span<const std::size_t> rows) const;
};

// Loads one image as float 3 x H x W in [0, 1] at the target resolution.
using ImageLoader = std::function<torch::Tensor(const ManifestRow&)>;

ImageLoader file_image_loader(int64_t resolution);

ImageSet load_split(const DatasetManifest& manifest, Split split, const ImageLoader& loader);

struct AugmentOptions {
  int64_t pad = 4;
  bool flip = true;
};

// Random crop from a zero-padded copy plus random horizontal flip, per sample.
torch::Tensor augment_batch(const torch::Tensor& images, const AugmentOptions& options,
                            at::Generator& generator);

}  // namespace fopro::data

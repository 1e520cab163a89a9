#include "fopro/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fopro/errors.hpp"

namespace fopro::data {

namespace fs = std::filesystem;

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "?";
}

Split split_from_string(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  if (text == "unassigned" || text.empty()) return Split::unassigned;
  throw InvalidManifest("unknown split '" + text + "'");
}

std::vector<int64_t> DatasetManifest::class_counts(Split split, int num_classes) const {
  std::vector<int64_t> counts(num_classes, 0);
  for (const auto& row : rows) {
    if (row.split != split) continue;
    if (row.label < 0 || row.label >= num_classes) {
      throw InvalidManifest("label " + std::to_string(row.label) + " out of range for " + row.path);
    }
    ++counts[row.label];
  }
  return counts;
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].split == split) out.push_back(i);
  }
  return out;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidManifest("cannot write manifest " + path.string());
  out << "path,label,split\n";
  for (const auto& row : manifest.rows) {
    if (row.path.find(',') != std::string::npos) {
      throw InvalidManifest("manifest paths may not contain commas: " + row.path);
    }
    out << row.path << ',' << row.label << ',' << to_string(row.split) << '\n';
  }
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidManifest("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InvalidManifest("empty manifest " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const bool has_split = line == "path,label,split";
  if (!has_split && line != "path,label") {
    throw InvalidManifest("manifest header must be 'path,label,split' or 'path,label', got '" + line + "'");
  }
  DatasetManifest manifest;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string path_field, label_field, split_field;
    std::getline(ls, path_field, ',');
    std::getline(ls, label_field, ',');
    if (has_split) std::getline(ls, split_field, ',');
    ManifestRow row;
    row.path = path_field;
    try {
      row.label = std::stoi(label_field);
    } catch (const std::exception&) {
      throw InvalidManifest("bad label on line " + std::to_string(line_no) + " of " + path.string());
    }
    row.split = split_from_string(split_field);
    manifest.rows.push_back(std::move(row));
  }
  return manifest;
}

void LongTailSpec::validate() const {
  const std::size_t k = class_names.size();
  if (k < 1) throw InvalidArgument("LongTailSpec: no classes");
  if (full_counts.size() != k || train_counts.size() != k) {
    throw InvalidArgument("LongTailSpec: class names, full counts, and train counts differ in length");
  }
  if (val_per_class < 0 || test_per_class < 0) {
    throw InvalidArgument("LongTailSpec: negative holdout size");
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (train_counts[c] < 1 || full_counts[c] < 1) {
      throw InvalidArgument("LongTailSpec: counts for " + class_names[c] + " must be >= 1");
    }
    if (train_counts[c] > full_counts[c] - val_per_class - test_per_class) {
      throw ShortfallError(class_names[c],
                           "class '" + class_names[c] + "' needs " +
                               std::to_string(train_counts[c] + val_per_class + test_per_class) +
                               " images but the full set has " + std::to_string(full_counts[c]));
    }
  }
}

fs::path default_fixture_path() { return fs::path(FOPRO_DATA_DIR) / "isic_lt_splits.v1.csv"; }

LongTailSpec load_longtail_fixture(const fs::path& path, const std::string& imbalance_label) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open split fixture " + path.string());
  auto split_csv = [](const std::string& line) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::vector<std::string> header;
  std::vector<int64_t> full, target;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv(line);
    if (header.empty()) {
      header = cells;
      continue;
    }
    std::vector<int64_t> counts;
    for (std::size_t i = 1; i < cells.size(); ++i) counts.push_back(std::stoll(cells[i]));
    if (cells[0] == "Full") full = counts;
    if (cells[0] == imbalance_label) target = counts;
  }
  if (header.size() < 2 || full.empty()) throw InvalidArgument("malformed split fixture " + path.string());
  if (target.empty()) {
    throw InvalidArgument("split fixture has no row for imbalance ratio '" + imbalance_label + "'");
  }
  LongTailSpec spec;
  spec.class_names.assign(header.begin() + 1, header.end());
  spec.full_counts = full;
  spec.train_counts = target;
  spec.imbalance_label = imbalance_label;
  return spec;
}

uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) {
  auto mix = [](uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0xD6E8FEB86659FD93ULL));
}

namespace {

// Uniform integer in [0, n) by multiply-shift on a 64-bit draw.
std::size_t bounded(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

void fisher_yates(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[bounded(rng, i)]);
}

}  // namespace

std::vector<std::size_t> shuffled_indices(std::size_t n, uint64_t seed) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  fisher_yates(v, rng);
  return v;
}

DatasetManifest build_longtail_split(const DatasetManifest& full_manifest, const LongTailSpec& spec) {
  const int k = spec.num_classes();
  if (k < 1 || static_cast<int>(spec.train_counts.size()) != k) {
    throw InvalidArgument("build_longtail_split: malformed LongTailSpec");
  }
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < full_manifest.rows.size(); ++i) {
    const int label = full_manifest.rows[i].label;
    if (label < 0 || label >= k) {
      throw InvalidManifest("label " + std::to_string(label) + " out of range in full manifest");
    }
    by_class[label].push_back(i);
  }
  const int64_t holdout = spec.val_per_class + spec.test_per_class;
  for (int c = 0; c < k; ++c) {
    const auto available = static_cast<int64_t>(by_class[c].size());
    if (available < spec.train_counts[c] + holdout) {
      throw ShortfallError(spec.class_names[c],
                           "class '" + spec.class_names[c] + "' has " + std::to_string(available) +
                               " images, needs " + std::to_string(spec.train_counts[c]) + " train + " +
                               std::to_string(holdout) + " held out");
    }
  }

  DatasetManifest out;
  for (int c = 0; c < k; ++c) {
    auto order = by_class[c];
    std::mt19937_64 rng(derive_seed(spec.seed, 0x5311, static_cast<uint64_t>(c)));
    fisher_yates(order, rng);
    auto take = [&](std::size_t begin, int64_t count, Split split) {
      for (int64_t j = 0; j < count; ++j) {
        ManifestRow row = full_manifest.rows[order[begin + j]];
        row.split = split;
        out.rows.push_back(std::move(row));
      }
    };
    take(0, spec.val_per_class, Split::val);
    take(spec.val_per_class, spec.test_per_class, Split::test);
    take(holdout, spec.train_counts[c], Split::train);
  }
  return out;
}

std::vector<double> reweighting_weights(std::span<const int64_t> train_counts) {
  if (train_counts.empty()) throw InvalidArgument("reweighting_weights: no classes");
  std::vector<double> w(train_counts.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < train_counts.size(); ++k) {
    if (train_counts[k] < 1) throw InvalidArgument("reweighting_weights: counts must be >= 1");
    w[k] = 1.0 / static_cast<double>(train_counts[k]);
    sum += w[k];
  }
  const double scale = static_cast<double>(train_counts.size()) / sum;
  for (auto& v : w) v *= scale;
  return w;
}

ClassBalancedSampler::ClassBalancedSampler(std::span<const int64_t> labels, int num_classes,
                                           uint64_t seed)
    : by_class_(num_classes), epoch_length_(labels.size()), rng_(seed) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw InvalidManifest("ClassBalancedSampler: label out of range");
    }
    by_class_[labels[i]].push_back(i);
  }
  for (int c = 0; c < num_classes; ++c) {
    if (by_class_[c].empty()) {
      throw InvalidManifest("ClassBalancedSampler: class " + std::to_string(c) +
                            " has no training samples");
    }
  }
}

std::size_t ClassBalancedSampler::next() {
  const auto& members = by_class_[bounded(rng_, by_class_.size())];
  return members[bounded(rng_, members.size())];
}

std::vector<std::size_t> ClassBalancedSampler::epoch() {
  std::vector<std::size_t> out(epoch_length_);
  for (auto& i : out) i = next();
  return out;
}

std::pair<torch::Tensor, torch::Tensor> ImageSet::batch(std::span<const std::size_t> rows) const {
  std::vector<int64_t> idx(rows.begin(), rows.end());
  const auto index = torch::tensor(idx, torch::kInt64);
  auto x = images.index_select(0, index).to(torch::kFloat32).div_(255.0);
  std::vector<int64_t> y;
  y.reserve(rows.size());
  for (const auto r : rows) y.push_back(labels[r]);
  return {x, torch::tensor(y, torch::kInt64)};
}

ImageLoader file_image_loader(int64_t resolution) {
  return [resolution](const ManifestRow& row) {
    cv::Mat bgr = cv::imread(row.path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw InvalidManifest("cannot read image " + row.path);
    cv::Mat rgb, resized, as_float;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    const int side = static_cast<int>(resolution);
    cv::resize(rgb, resized, cv::Size(side, side), 0, 0, cv::INTER_AREA);
    resized.convertTo(as_float, CV_32FC3, 1.0 / 255.0);
    return torch::from_blob(as_float.data, {side, side, 3}, torch::kFloat32).permute({2, 0, 1}).clone();
  };
}

ImageSet load_split(const DatasetManifest& manifest, Split split, const ImageLoader& loader) {
  const auto rows = manifest.indices(split);
  ImageSet set;
  if (rows.empty()) {
    set.images = torch::empty({0, 3, 0, 0}, torch::kUInt8);
    return set;
  }
  std::vector<torch::Tensor> images;
  images.reserve(rows.size());
  for (const auto i : rows) {
    const auto img = loader(manifest.rows[i]);
    images.push_back(img.mul(255.0).round_().clamp_(0, 255).to(torch::kUInt8));
    set.labels.push_back(manifest.rows[i].label);
  }
  set.images = torch::stack(images);
  return set;
}

torch::Tensor augment_batch(const torch::Tensor& images, const AugmentOptions& options,
                            at::Generator& generator) {
  const int64_t b = images.size(0);
  const int64_t h = images.size(2);
  const int64_t w = images.size(3);
  const int64_t pad = options.pad;
  const auto offsets = torch::randint(0, 2 * pad + 1, {b, 2}, generator, torch::kInt64);
  const auto flips = torch::rand({b}, generator) < 0.5;
  const auto padded = pad > 0 ? torch::constant_pad_nd(images, {pad, pad, pad, pad}, 0.0) : images;
  std::vector<torch::Tensor> out;
  out.reserve(b);
  for (int64_t i = 0; i < b; ++i) {
    auto crop = padded[i]
                    .narrow(1, offsets[i][0].item<int64_t>(), h)
                    .narrow(2, offsets[i][1].item<int64_t>(), w);
    if (options.flip && flips[i].item<bool>()) crop = crop.flip({2});
    out.push_back(crop);
  }
  return torch::stack(out);
}

}  // namespace fopro::data

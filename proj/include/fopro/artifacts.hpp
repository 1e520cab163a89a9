#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fopro/eval.hpp"

namespace fopro::artifacts {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Static SVG line chart with axes, ticks and a legend. Parent directories are
// created as needed.
void write_line_plot_svg(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                         const std::string& y_label, const std::vector<Series>& series);

// Row-normalized confusion heatmap with raw counts in each cell.
void write_confusion_svg(const std::filesystem::path& path, const eval::ConfusionMatrix& cm,
                         const std::vector<std::string>& class_names);

// Tiles N x C x H x W images (C = 1 or 3, values in [0, 1]) into a PNG grid,
// row-major with `columns` tiles per row, each upscaled by `scale`.
void write_image_grid_png(const std::filesystem::path& path, const torch::Tensor& images, int64_t columns,
                          int64_t scale = 1, int64_t gap = 2);

// Reads a PNG grid back as uint8 H x W x 3 (RGB); empty tensor when unreadable.
torch::Tensor read_png(const std::filesystem::path& path);

}  // namespace fopro::artifacts

#include "fopro/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fopro/errors.hpp"

namespace fopro::artifacts {

namespace fs = std::filesystem;

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string escape(const std::string& text) {
  std::string out;
  for (const char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << text;
}

}  // namespace

void write_line_plot_svg(const fs::path& path, const std::string& title, const std::string& x_label,
                         const std::string& y_label, const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 70, R = 170, T = 40, B = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    os << "<line x1=\"" << px(xv) << "\" y1=\"" << H - B << "\" x2=\"" << px(xv) << "\" y2=\"" << H - B + 5
       << "\" stroke=\"black\"/><text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
       << fmt(xv) << "</text>\n";
    os << "<line x1=\"" << L - 5 << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
       << "\" stroke=\"#dddddd\"/><text x=\"" << L - 8 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
       << fmt(yv) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape(x_label)
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">" << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.y[i])) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    os << "\"/>\n";
    const double ly = T + 10 + 20.0 * static_cast<double>(k);
    os << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << W - R + 38 << "\" y=\"" << ly + 4
       << "\">" << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  write_file(path, os.str());
}

void write_confusion_svg(const fs::path& path, const eval::ConfusionMatrix& cm,
                         const std::vector<std::string>& class_names) {
  const int k = cm.num_classes();
  constexpr double cell = 44, L = 90, T = 60;
  const double W = L + cell * k + 20, H = T + cell * k + 40;
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"20\" font-size=\"14\">Confusion (rows: true, columns: predicted)</text>\n";
  for (int t = 0; t < k; ++t) {
    const auto name = t < static_cast<int>(class_names.size()) ? class_names[t] : std::to_string(t);
    os << "<text x=\"" << L - 6 << "\" y=\"" << T + cell * t + cell / 2 + 4 << "\" text-anchor=\"end\">"
       << escape(name) << "</text>\n";
    os << "<text x=\"" << L + cell * t + cell / 2 << "\" y=\"" << T - 8 << "\" text-anchor=\"middle\">"
       << escape(name) << "</text>\n";
    const auto row = cm.row_sum(t);
    for (int p = 0; p < k; ++p) {
      const double frac = row > 0 ? static_cast<double>(cm.at(t, p)) / static_cast<double>(row) : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - frac)));
      os << "<rect x=\"" << L + cell * p << "\" y=\"" << T + cell * t << "\" width=\"" << cell << "\" height=\""
         << cell << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" stroke=\"#999999\"/>";
      os << "<text x=\"" << L + cell * p + cell / 2 << "\" y=\"" << T + cell * t + cell / 2 + 4
         << "\" text-anchor=\"middle\" fill=\"" << (frac > 0.5 ? "white" : "black") << "\">" << cm.at(t, p)
         << "</text>\n";
    }
  }
  os << "</svg>\n";
  write_file(path, os.str());
}

void write_image_grid_png(const fs::path& path, const torch::Tensor& images, int64_t columns, int64_t scale,
                          int64_t gap) {
  if (images.dim() != 4 || (images.size(1) != 1 && images.size(1) != 3)) {
    throw InvalidArgument("write_image_grid_png: expected N x {1,3} x H x W");
  }
  if (columns < 1 || scale < 1 || gap < 0) throw InvalidArgument("write_image_grid_png: bad layout");
  const int64_t n = images.size(0), h = images.size(2) * scale, w = images.size(3) * scale;
  const int64_t cols = std::min(columns, std::max<int64_t>(n, 1));
  const int64_t rows = (n + cols - 1) / cols;
  cv::Mat canvas(static_cast<int>(std::max<int64_t>(rows, 1) * (h + gap) + gap),
                 static_cast<int>(cols * (w + gap) + gap), CV_8UC3, cv::Scalar(255, 255, 255));
  auto u8 = images.detach().to(torch::kFloat64).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
  if (u8.size(1) == 1) u8 = u8.expand({n, 3, images.size(2), images.size(3)});
  u8 = u8.permute({0, 2, 3, 1}).contiguous();
  for (int64_t i = 0; i < n; ++i) {
    const auto tile_rgb = u8[i].contiguous();
    cv::Mat rgb(static_cast<int>(images.size(2)), static_cast<int>(images.size(3)), CV_8UC3, tile_rgb.data_ptr());
    cv::Mat bgr, big;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    cv::resize(bgr, big, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0, cv::INTER_NEAREST);
    const int x = static_cast<int>(gap + (i % cols) * (w + gap));
    const int y = static_cast<int>(gap + (i / cols) * (h + gap));
    big.copyTo(canvas(cv::Rect(x, y, static_cast<int>(w), static_cast<int>(h))));
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) throw InvalidInput("cannot write " + path.string());
}

torch::Tensor read_png(const fs::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) return {};
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
}

}  // namespace fopro::artifacts

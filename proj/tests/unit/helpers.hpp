#pragma once

#include <vector>

#include <torch/torch.h>

#include "fopro/config.hpp"
#include "oracles.hpp"

namespace fopro::testing {

// A few hundred 16x16 images and small nets keep each epoch well under a second.
inline ExperimentConfig tiny_config(Method method, uint64_t seed = 0) {
  auto c = desk_config(method, seed);
  c.dataset.class_names = {"a", "b", "c", "d"};
  c.dataset.train_counts = {64, 32, 12, 6};
  c.dataset.full_counts = {74, 42, 22, 16};
  c.dataset.val_per_class = 4;
  c.dataset.test_per_class = 6;
  c.dataset.resolution = 16;
  c.dataset.head_min = 40;
  c.dataset.tail_max = 10;
  c.model.teacher_arch = ArchSpec{"toy_cnn", {8, 16}};
  c.model.student_arch = ArchSpec{"toy_cnn", {8, 16}};
  c.model.calibration_images = 64;
  c.schedule.max_epochs = 12;
  c.schedule.early_stop_patience = 12;
  return c;
}

inline oracles::Grid to_grid(const torch::Tensor& plane) {
  const auto p = plane.to(torch::kFloat64).contiguous();
  oracles::Grid g;
  g.height = static_cast<std::size_t>(p.size(0));
  g.width = static_cast<std::size_t>(p.size(1));
  g.values.assign(p.data_ptr<double>(), p.data_ptr<double>() + p.numel());
  return g;
}

inline std::vector<double> to_vector(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

inline torch::Tensor from_vector(const std::vector<double>& v, at::IntArrayRef shape) {
  return torch::tensor(v, torch::kFloat64).view(shape).clone();
}

// Analytic gradient of `f` at `x0` (float64) against central differences.
template <typename F>
double gradient_error(F f, const torch::Tensor& x0, double step = 1e-3) {
  auto x = x0.detach().to(torch::kFloat64).clone().requires_grad_(true);
  const auto loss = f(x);
  loss.backward();
  const auto analytic = to_vector(x.grad());
  const auto shape = x0.sizes().vec();
  const auto numeric = oracles::finite_difference_gradient(
      [&](const std::vector<double>& p) {
        torch::NoGradGuard no_grad;
        return f(from_vector(p, shape)).template item<double>();
      },
      to_vector(x0), step);
  if (numeric.non_finite_coordinate) return std::numeric_limits<double>::infinity();
  return oracles::relative_error(analytic, numeric.gradient);
}

}  // namespace fopro::testing

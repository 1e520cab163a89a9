#pragma once

// Brute-force reference implementations for the test suite. Nothing in here
// may call into the fopro library or libtorch.

#include <complex>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fopro::oracles {

// Row-major H x W real grid.
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
};

struct ComplexGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::complex<double>> values;
};

inline constexpr std::size_t kMaxOracleSide = 8;

// Direct double-sum DFT, unnormalized. Refuses inputs larger than 8 x 8.
ComplexGrid dft_oracle(const Grid& x);

// Direct double-sum inverse DFT with the 1/(HW) factor.
ComplexGrid inverse_dft_oracle(const ComplexGrid& spectrum);

struct FiniteDifferenceResult {
  std::vector<double> gradient;
  // Set when the loss went non-finite while probing a coordinate.
  std::optional<std::size_t> non_finite_coordinate;
};

FiniteDifferenceResult finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& loss, const std::vector<double>& params,
    double step = 1e-3);

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

struct MetricOracleResult {
  double mcc = 0.0;
  double balanced_accuracy = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
};

// Metrics from raw label lists. MCC uses the covariance of one-hot
// indicator vectors summed over classes.
MetricOracleResult metric_oracle(const std::vector<int>& truth, const std::vector<int>& predicted,
                                 int num_classes);

}  // namespace fopro::oracles

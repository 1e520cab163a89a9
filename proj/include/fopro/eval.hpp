#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace fopro {

enum class ShotGroup { head, medium, tail };

const char* to_string(ShotGroup group);

// Shot-based class division computed from training counts: head when a
// class has more than head_min samples, tail when it has fewer than tail_max.
struct ShotGrouping {
  int64_t head_min = 700;
  int64_t tail_max = 70;
  std::vector<ShotGroup> groups;
};

ShotGrouping shot_grouping(std::span<const int64_t> train_counts, int64_t head_min = 700,
                           int64_t tail_max = 70);

}  // namespace fopro

namespace fopro::eval {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  static ConfusionMatrix from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                          int num_classes);

  void add(int truth, int predicted, int64_t count = 1);

  int num_classes() const { return num_classes_; }
  int64_t at(int truth, int predicted) const { return cells_[index(truth, predicted)]; }
  int64_t total() const;
  int64_t trace() const;
  int64_t row_sum(int truth) const;
  int64_t col_sum(int predicted) const;

  // Same permutation applied to rows and columns: new class i is old perm[i].
  ConfusionMatrix permuted(std::span<const int> perm) const;

  std::string to_csv(const std::vector<std::string>& class_names) const;
  static ConfusionMatrix from_csv(const std::string& text);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t index(int truth, int predicted) const;

  int num_classes_;
  std::vector<int64_t> cells_;
};

// Gorodkin's multiclass MCC; 0 when either denominator factor vanishes.
double mcc(const ConfusionMatrix& cm);

double accuracy(const ConfusionMatrix& cm);

struct BalancedAccuracy {
  double value = 0.0;
  // True classes with no samples; left out of the mean.
  std::vector<int> excluded_classes;
};

BalancedAccuracy balanced_accuracy(const ConfusionMatrix& cm);

double macro_f1(const ConfusionMatrix& cm);

struct GroupedAccuracy {
  std::optional<double> head;
  std::optional<double> medium;
  std::optional<double> tail;
  // Unweighted mean of the defined groups.
  double all = 0.0;
  std::vector<std::string> warnings;
};

GroupedAccuracy grouped_accuracy(const ConfusionMatrix& cm, const ShotGrouping& grouping);

struct MetricsReport {
  double mcc = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double balanced_accuracy = 0.0;
  GroupedAccuracy grouped;
  std::vector<int> excluded_classes;
};

MetricsReport evaluate_confusion(const ConfusionMatrix& cm, const ShotGrouping& grouping);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

}  // namespace fopro::eval

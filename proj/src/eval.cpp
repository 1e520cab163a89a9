#include "fopro/eval.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "fopro/errors.hpp"

namespace fopro {

const char* to_string(ShotGroup group) {
  switch (group) {
    case ShotGroup::head: return "head";
    case ShotGroup::medium: return "medium";
    case ShotGroup::tail: return "tail";
  }
  return "?";
}

ShotGrouping shot_grouping(std::span<const int64_t> train_counts, int64_t head_min, int64_t tail_max) {
  ShotGrouping g;
  g.head_min = head_min;
  g.tail_max = tail_max;
  g.groups.reserve(train_counts.size());
  for (const int64_t n : train_counts) {
    if (n < 1) throw InvalidArgument("shot_grouping: class counts must be >= 1");
    if (n > head_min) {
      g.groups.push_back(ShotGroup::head);
    } else if (n < tail_max) {
      g.groups.push_back(ShotGroup::tail);
    } else {
      g.groups.push_back(ShotGroup::medium);
    }
  }
  return g;
}

}  // namespace fopro

namespace fopro::eval {

ConfusionMatrix::ConfusionMatrix(int num_classes) : num_classes_(num_classes) {
  if (num_classes < 1) throw InvalidArgument("ConfusionMatrix: need at least one class");
  cells_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::span<const int> truth,
                                                  std::span<const int> predicted, int num_classes) {
  if (truth.size() != predicted.size()) {
    throw InvalidArgument("ConfusionMatrix: truth and prediction lists differ in length");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

std::size_t ConfusionMatrix::index(int truth, int predicted) const {
  if (truth < 0 || truth >= num_classes_ || predicted < 0 || predicted >= num_classes_) {
    throw InvalidArgument("ConfusionMatrix: class index out of range");
  }
  return static_cast<std::size_t>(truth) * num_classes_ + predicted;
}

void ConfusionMatrix::add(int truth, int predicted, int64_t count) {
  if (count < 0) throw InvalidArgument("ConfusionMatrix: negative count");
  cells_[index(truth, predicted)] += count;
}

int64_t ConfusionMatrix::total() const {
  return std::accumulate(cells_.begin(), cells_.end(), int64_t{0});
}

int64_t ConfusionMatrix::trace() const {
  int64_t t = 0;
  for (int k = 0; k < num_classes_; ++k) t += at(k, k);
  return t;
}

int64_t ConfusionMatrix::row_sum(int truth) const {
  int64_t s = 0;
  for (int p = 0; p < num_classes_; ++p) s += at(truth, p);
  return s;
}

int64_t ConfusionMatrix::col_sum(int predicted) const {
  int64_t s = 0;
  for (int t = 0; t < num_classes_; ++t) s += at(t, predicted);
  return s;
}

ConfusionMatrix ConfusionMatrix::permuted(std::span<const int> perm) const {
  if (static_cast<int>(perm.size()) != num_classes_) {
    throw InvalidArgument("ConfusionMatrix::permuted: permutation size mismatch");
  }
  ConfusionMatrix out(num_classes_);
  for (int i = 0; i < num_classes_; ++i) {
    for (int j = 0; j < num_classes_; ++j) out.cells_[out.index(i, j)] = at(perm[i], perm[j]);
  }
  return out;
}

std::string ConfusionMatrix::to_csv(const std::vector<std::string>& class_names) const {
  std::ostringstream os;
  os << "true\\pred";
  for (int p = 0; p < num_classes_; ++p) {
    os << ',' << (p < static_cast<int>(class_names.size()) ? class_names[p] : std::to_string(p));
  }
  os << '\n';
  for (int t = 0; t < num_classes_; ++t) {
    os << (t < static_cast<int>(class_names.size()) ? class_names[t] : std::to_string(t));
    for (int p = 0; p < num_classes_; ++p) os << ',' << at(t, p);
    os << '\n';
  }
  return os.str();
}

ConfusionMatrix ConfusionMatrix::from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::vector<int64_t>> rows;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');  // row label
    std::vector<int64_t> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stoll(cell));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidInput("ConfusionMatrix::from_csv: no rows");
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (int t = 0; t < cm.num_classes_; ++t) {
    if (static_cast<int>(rows[t].size()) != cm.num_classes_) {
      throw InvalidInput("ConfusionMatrix::from_csv: ragged matrix");
    }
    for (int p = 0; p < cm.num_classes_; ++p) cm.add(t, p, rows[t][p]);
  }
  return cm;
}

double mcc(const ConfusionMatrix& cm) {
  const int64_t total = cm.total();
  if (total == 0) throw InvalidInput("mcc: empty confusion matrix");
  const double c = static_cast<double>(cm.trace());
  const double s = static_cast<double>(total);
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    const double t_k = static_cast<double>(cm.row_sum(k));
    const double p_k = static_cast<double>(cm.col_sum(k));
    pt += p_k * t_k;
    pp += p_k * p_k;
    tt += t_k * t_k;
  }
  const double denom_pred = s * s - pp;
  const double denom_true = s * s - tt;
  if (denom_pred == 0.0 || denom_true == 0.0) return 0.0;
  return (c * s - pt) / std::sqrt(denom_pred * denom_true);
}

double accuracy(const ConfusionMatrix& cm) {
  const int64_t total = cm.total();
  if (total == 0) throw InvalidInput("accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

BalancedAccuracy balanced_accuracy(const ConfusionMatrix& cm) {
  BalancedAccuracy out;
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    const int64_t n = cm.row_sum(k);
    if (n == 0) {
      out.excluded_classes.push_back(k);
      continue;
    }
    sum += static_cast<double>(cm.at(k, k)) / static_cast<double>(n);
    ++present;
  }
  if (present == 0) throw InvalidInput("balanced_accuracy: empty confusion matrix");
  out.value = sum / present;
  return out;
}

double macro_f1(const ConfusionMatrix& cm) {
  double sum = 0.0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    const double tp = static_cast<double>(cm.at(k, k));
    const double fp = static_cast<double>(cm.col_sum(k)) - tp;
    const double fn = static_cast<double>(cm.row_sum(k)) - tp;
    // F1 = 2TP / (2TP + FP + FN); zero when the class never appears.
    const double denom = 2.0 * tp + fp + fn;
    sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  return sum / cm.num_classes();
}

GroupedAccuracy grouped_accuracy(const ConfusionMatrix& cm, const ShotGrouping& grouping) {
  if (static_cast<int>(grouping.groups.size()) != cm.num_classes()) {
    throw InvalidArgument("grouped_accuracy: grouping does not cover every class");
  }
  double sums[3] = {0.0, 0.0, 0.0};
  int counts[3] = {0, 0, 0};
  for (int k = 0; k < cm.num_classes(); ++k) {
    const int64_t n = cm.row_sum(k);
    if (n == 0) continue;
    const auto g = static_cast<int>(grouping.groups[k]);
    sums[g] += static_cast<double>(cm.at(k, k)) / static_cast<double>(n);
    ++counts[g];
  }
  GroupedAccuracy out;
  std::optional<double>* slots[3] = {&out.head, &out.medium, &out.tail};
  double all = 0.0;
  int defined = 0;
  for (int g = 0; g < 3; ++g) {
    if (counts[g] == 0) {
      out.warnings.push_back(std::string("group '") + to_string(static_cast<ShotGroup>(g)) +
                             "' has no evaluated classes; excluded from All");
      continue;
    }
    *slots[g] = sums[g] / counts[g];
    all += **slots[g];
    ++defined;
  }
  out.all = defined > 0 ? all / defined : 0.0;
  return out;
}

MetricsReport evaluate_confusion(const ConfusionMatrix& cm, const ShotGrouping& grouping) {
  MetricsReport r;
  r.mcc = mcc(cm);
  r.accuracy = accuracy(cm);
  r.macro_f1 = macro_f1(cm);
  const auto bacc = balanced_accuracy(cm);
  r.balanced_accuracy = bacc.value;
  r.excluded_classes = bacc.excluded_classes;
  r.grouped = grouped_accuracy(cm, grouping);
  return r;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

nlohmann::json to_json(const MetricsReport& report) {
  return {
      {"mcc", report.mcc},
      {"accuracy", report.accuracy},
      {"macro_f1", report.macro_f1},
      {"balanced_accuracy", report.balanced_accuracy},
      {"excluded_classes", report.excluded_classes},
      {"grouped",
       {{"head", optional_json(report.grouped.head)},
        {"medium", optional_json(report.grouped.medium)},
        {"tail", optional_json(report.grouped.tail)},
        {"all", report.grouped.all},
        {"warnings", report.grouped.warnings}}},
  };
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.mcc = j.at("mcc").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.balanced_accuracy = j.at("balanced_accuracy").get<double>();
  r.excluded_classes = j.value("excluded_classes", std::vector<int>{});
  const auto& g = j.at("grouped");
  r.grouped.head = optional_from(g.at("head"));
  r.grouped.medium = optional_from(g.at("medium"));
  r.grouped.tail = optional_from(g.at("tail"));
  r.grouped.all = g.at("all").get<double>();
  r.grouped.warnings = g.value("warnings", std::vector<std::string>{});
  return r;
}

}  // namespace fopro::eval

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fopro/config.hpp"
#include "fopro/eval.hpp"
#include "fopro/train.hpp"

namespace fopro::cli {

inline constexpr const char* kOutputRootEnv = "FOPRO_OUTPUT_ROOT";

// Flags shared by the run-producing verbs.
struct RunOptions {
  std::string config;                 // JSON config path; empty selects the desk preset
  std::optional<std::string> method;  // overrides the config's method
  std::optional<uint64_t> seed;
  std::string out;
  bool resume = false;
  std::optional<std::string> device;
};

// $FOPRO_OUTPUT_ROOT, or "runs" under the working directory.
std::filesystem::path default_output_root();

ExperimentConfig resolve_config(const RunOptions& options);
// --out, then the config's out_dir, then <root>/<method>-seed<seed>.
std::filesystem::path resolve_run_dir(const ExperimentConfig& config, const RunOptions& options);

struct DatasetSummary {
  std::filesystem::path manifest_path;
  std::vector<std::string> class_names;
  std::vector<int64_t> train, val, test;
};

// Writes manifest.csv and class_counts.csv, prints the per-class table.
DatasetSummary cmd_build_dataset(const RunOptions& options, std::ostream& out);

TrainingResult cmd_train(const RunOptions& options, std::ostream& out);

// Evaluates a saved student checkpoint ("best", "final", or a path) of a run
// directory on one split; writes report, confusion CSV and heatmap.
eval::MetricsReport cmd_evaluate(const std::filesystem::path& run_dir, const std::string& split,
                                 const std::string& checkpoint, std::ostream& out);

struct PromptInspection {
  std::vector<std::filesystem::path> files;
  std::vector<double> alphas;
};

// Exports prompt, clean-image and prompted-image grids for sampled noise
// vectors and mixing weights under <run_dir>/prompts.
PromptInspection cmd_inspect_prompts(const std::filesystem::path& run_dir, int64_t num_samples, uint64_t seed,
                                     std::ostream& out);

struct ComparisonRow {
  std::string method;
  int runs = 0;
  std::map<std::string, double> mean;
  // Sample standard deviation; absent for a single run.
  std::map<std::string, std::optional<double>> stddev;
};

struct ComparisonTable {
  std::vector<std::string> metrics;
  std::vector<ComparisonRow> rows;  // sorted by balanced accuracy, descending
};

ComparisonTable cmd_compare(const std::vector<std::filesystem::path>& run_dirs, const std::string& split,
                            const std::filesystem::path& csv_path, std::ostream& out);

// Full command line entry point; returns the process exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace fopro::cli

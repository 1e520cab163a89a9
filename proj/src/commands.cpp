#include "fopro/commands.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

#include "fopro/artifacts.hpp"
#include "fopro/checkpoint.hpp"
#include "fopro/errors.hpp"

namespace fopro::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

fs::path default_output_root() {
  if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') return env;
  return "runs";
}

ExperimentConfig resolve_config(const RunOptions& options) {
  ExperimentConfig config = options.config.empty() ? desk_config(Method::fopro_kd, 0) : load_config(options.config);
  if (options.method) config.method = method_from_string(*options.method);
  if (options.seed) config.seed = *options.seed;
  if (options.device) config.device = *options.device;
  if (!options.out.empty()) config.out_dir = options.out;
  config.validate();
  return config;
}

fs::path resolve_run_dir(const ExperimentConfig& config, const RunOptions& options) {
  if (!options.out.empty()) return options.out;
  if (!config.out_dir.empty()) return config.out_dir;
  return default_output_root() / (std::string(to_string(config.method)) + "-seed" + std::to_string(config.seed));
}

// ---------------------------------------------------------------- build-dataset

DatasetSummary cmd_build_dataset(const RunOptions& options, std::ostream& out) {
  const auto config = resolve_config(options);
  fs::path dir = options.out.empty() ? fs::path(config.out_dir) : fs::path(options.out);
  if (dir.empty()) {
    const auto label = config.dataset.imbalance_label.empty() ? std::string("custom") : config.dataset.imbalance_label;
    std::string safe;
    for (const char c : label) safe += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    dir = default_output_root() / ("dataset-" + safe);
  }
  fs::create_directories(dir);

  const auto spec = config.longtail_spec();
  const auto manifest = build_manifest(config);
  const int k = spec.num_classes();

  DatasetSummary s;
  s.manifest_path = dir / "manifest.csv";
  s.class_names = spec.class_names;
  s.train = manifest.class_counts(data::Split::train, k);
  s.val = manifest.class_counts(data::Split::val, k);
  s.test = manifest.class_counts(data::Split::test, k);
  data::write_manifest(s.manifest_path, manifest);

  std::ostringstream csv;
  csv << "class,train,val,test\n";
  for (int c = 0; c < k; ++c) csv << spec.class_names[c] << ',' << s.train[c] << ',' << s.val[c] << ',' << s.test[c] << '\n';
  std::ofstream(dir / "class_counts.csv", std::ios::binary) << csv.str();

  out << std::left << std::setw(12) << "class" << std::right << std::setw(10) << "train" << std::setw(8) << "val"
      << std::setw(8) << "test" << '\n';
  int64_t tt = 0, tv = 0, te = 0;
  for (int c = 0; c < k; ++c) {
    out << std::left << std::setw(12) << spec.class_names[c] << std::right << std::setw(10) << s.train[c]
        << std::setw(8) << s.val[c] << std::setw(8) << s.test[c] << '\n';
    tt += s.train[c];
    tv += s.val[c];
    te += s.test[c];
  }
  out << std::left << std::setw(12) << "total" << std::right << std::setw(10) << tt << std::setw(8) << tv
      << std::setw(8) << te << '\n';
  out << "manifest written to " << s.manifest_path.string() << '\n';
  return s;
}

// ---------------------------------------------------------------- train

TrainingResult cmd_train(const RunOptions& options, std::ostream& out) {
  const auto config = resolve_config(options);
  const auto dir = resolve_run_dir(config, options);
  Trainer trainer(config, dir);
  TrainOptions train_options;
  train_options.resume = options.resume;
  const auto result = trainer.train(train_options);
  out << "run directory: " << dir.string() << '\n';
  out << "epochs completed: " << result.state.next_epoch << (result.state.stopped_early ? " (early stop)" : "")
      << ", best validation accuracy " << result.state.best_val_accuracy << " at epoch " << result.state.best_epoch
      << '\n';
  if (result.test_report) {
    out << "test: balanced accuracy " << result.test_report->balanced_accuracy << ", MCC "
        << result.test_report->mcc << ", accuracy " << result.test_report->accuracy << '\n';
  }
  return result;
}

// ---------------------------------------------------------------- evaluate

namespace {

data::DatasetManifest run_manifest(const fs::path& run_dir, const ExperimentConfig& config) {
  const auto path = run_dir / "manifest.csv";
  return fs::exists(path) ? data::read_manifest(path) : build_manifest(config);
}

}  // namespace

eval::MetricsReport cmd_evaluate(const fs::path& run_dir, const std::string& split_name,
                                 const std::string& checkpoint, std::ostream& out) {
  const auto config = load_config(run_dir / "config.json");
  const auto split = data::split_from_string(split_name);
  if (split == data::Split::unassigned) throw InvalidArgument("evaluate: split must be train, val or test");
  fs::path ckpt = checkpoint;
  if (checkpoint == "best" || checkpoint == "final") {
    ckpt = run_dir / "checkpoints" / (checkpoint + "_student.ckpt");
  }
  if (!fs::exists(ckpt)) throw CheckpointError(ckpt.string() + ": checkpoint not found");
  auto student = load_student(ckpt);

  const auto spec = config.longtail_spec();
  const auto manifest = run_manifest(run_dir, config);
  const auto set = data::load_split(manifest, split, make_loader(config));
  const auto cm = confusion_on(student, set, spec.num_classes());
  const auto grouping = shot_grouping(manifest.class_counts(data::Split::train, spec.num_classes()),
                                      config.dataset.head_min, config.dataset.tail_max);
  const auto report = eval::evaluate_confusion(cm, grouping);

  std::ofstream(run_dir / ("report_" + split_name + ".json"))
      << report_document(config, spec.class_names, split_name, report).dump(2) << '\n';
  std::ofstream(run_dir / ("confusion_" + split_name + ".csv")) << cm.to_csv(spec.class_names);
  artifacts::write_confusion_svg(run_dir / "plots" / ("confusion_" + split_name + ".svg"), cm, spec.class_names);

  out << split_name << ": MCC " << report.mcc << ", accuracy " << report.accuracy << ", balanced accuracy "
      << report.balanced_accuracy << ", macro F1 " << report.macro_f1 << '\n';
  for (const auto& w : report.grouped.warnings) out << "warning: " << w << '\n';
  return report;
}

// ---------------------------------------------------------------- inspect-prompts

PromptInspection cmd_inspect_prompts(const fs::path& run_dir, int64_t num_samples, uint64_t seed,
                                     std::ostream& out) {
  if (num_samples < 1) throw InvalidArgument("inspect-prompts: need at least one sample");
  const auto config = load_config(run_dir / "config.json");
  auto fpg = load_prompt_generator(run_dir / "checkpoints" / "fpg.ckpt");
  // Double precision keeps the alpha = 1 column pixel-identical to the input.
  fpg->to(torch::kFloat64);
  fpg->eval();

  const auto manifest = run_manifest(run_dir, config);
  const auto test_rows = manifest.indices(data::Split::test);
  if (test_rows.empty()) throw InvalidInput("inspect-prompts: the run has no test images");
  const auto order = data::shuffled_indices(test_rows.size(), seed);
  data::DatasetManifest picked;
  for (std::size_t i = 0; i < order.size() && static_cast<int64_t>(i) < num_samples; ++i) {
    picked.rows.push_back(manifest.rows[test_rows[order[i]]]);
  }
  const auto images = data::load_split(picked, data::Split::test, make_loader(config));
  std::vector<std::size_t> all(static_cast<std::size_t>(images.size()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto x = images.batch(all).first.to(torch::kFloat64);
  const int64_t n = x.size(0);

  PromptInspection result;
  result.alphas = {0.0, 0.25, 0.5, 0.75, 1.0};
  auto gen = at::make_generator<at::CPUGeneratorImpl>(data::derive_seed(seed, 0x1b5));
  std::vector<torch::Tensor> deltas;
  std::vector<std::vector<torch::Tensor>> prompted(result.alphas.size());
  {
    torch::NoGradGuard no_grad;
    for (int64_t i = 0; i < n; ++i) {
      const auto prompt = fpg->forward(sample_noise(fpg->options().noise_dim, gen, torch::kFloat64));
      deltas.push_back(spectral::display_prompt(prompt));
      for (std::size_t a = 0; a < result.alphas.size(); ++a) {
        const auto alpha = torch::full({1}, result.alphas[a], torch::kFloat64);
        prompted[a].push_back(spectral::prompt_images(x.slice(0, i, i + 1), prompt, alpha)[0]);
      }
    }
  }

  const auto dir = run_dir / "prompts";
  const int64_t scale = std::max<int64_t>(1, 96 / x.size(2));
  auto emit = [&](const std::string& name, const torch::Tensor& grid, int64_t columns) {
    const auto path = dir / name;
    artifacts::write_image_grid_png(path, grid, columns, scale);
    result.files.push_back(path);
  };
  emit("delta.png", torch::stack(deltas), n);
  emit("x.png", x, n);
  std::vector<torch::Tensor> side_by_side;
  for (std::size_t a = 0; a < result.alphas.size(); ++a) {
    std::ostringstream name;
    name << "x_hat_alpha_" << std::fixed << std::setprecision(2) << result.alphas[a] << ".png";
    emit(name.str(), torch::stack(prompted[a]).clamp(0.0, 1.0), n);
  }
  for (int64_t i = 0; i < n; ++i) {
    side_by_side.push_back(deltas[static_cast<std::size_t>(i)]);
    side_by_side.push_back(x[i]);
    for (std::size_t a = 0; a < result.alphas.size(); ++a) {
      side_by_side.push_back(prompted[a][static_cast<std::size_t>(i)].clamp(0.0, 1.0));
    }
  }
  emit("grid.png", torch::stack(side_by_side), static_cast<int64_t>(2 + result.alphas.size()));
  out << "grid columns: prompt, x";
  for (const auto a : result.alphas) out << ", x_hat(alpha=" << a << ")";
  out << '\n';
  for (const auto& f : result.files) out << "wrote " << f.string() << '\n';
  return result;
}

// ---------------------------------------------------------------- compare

ComparisonTable cmd_compare(const std::vector<fs::path>& run_dirs, const std::string& split,
                            const fs::path& csv_path, std::ostream& out) {
  if (run_dirs.empty()) throw InvalidArgument("compare: need at least one run directory");
  ComparisonTable table;
  table.metrics = {"balanced_accuracy", "mcc", "accuracy", "macro_f1", "head", "medium", "tail"};

  std::optional<std::vector<std::string>> class_names;
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  std::map<std::string, int> runs;
  for (const auto& dir : run_dirs) {
    const auto path = dir / ("report_" + split + ".json");
    std::ifstream in(path);
    if (!in) throw InvalidInput(path.string() + ": report not found");
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw InvalidInput(path.string() + ": " + e.what());
    }
    const auto names = doc.at("class_names").get<std::vector<std::string>>();
    if (class_names && *class_names != names) {
      throw InvalidInput("compare: " + dir.string() + " uses a different class set than " + run_dirs.front().string());
    }
    class_names = names;
    const auto report = eval::report_from_json(doc.at("metrics"));
    const auto method = doc.at("method").get<std::string>();
    ++runs[method];
    auto& v = values[method];
    v["balanced_accuracy"].push_back(report.balanced_accuracy);
    v["mcc"].push_back(report.mcc);
    v["accuracy"].push_back(report.accuracy);
    v["macro_f1"].push_back(report.macro_f1);
    if (report.grouped.head) v["head"].push_back(*report.grouped.head);
    if (report.grouped.medium) v["medium"].push_back(*report.grouped.medium);
    if (report.grouped.tail) v["tail"].push_back(*report.grouped.tail);
  }

  for (const auto& [method, metrics] : values) {
    ComparisonRow row;
    row.method = method;
    row.runs = runs[method];
    for (const auto& m : table.metrics) {
      const auto it = metrics.find(m);
      if (it == metrics.end() || it->second.empty()) continue;
      const auto& xs = it->second;
      double mean = 0.0;
      for (const double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      row.mean[m] = mean;
      if (xs.size() > 1) {
        double ss = 0.0;
        for (const double x : xs) ss += (x - mean) * (x - mean);
        row.stddev[m] = std::sqrt(ss / static_cast<double>(xs.size() - 1));
      } else {
        row.stddev[m] = std::nullopt;
      }
    }
    table.rows.push_back(std::move(row));
  }
  std::stable_sort(table.rows.begin(), table.rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    return a.mean.at("balanced_accuracy") > b.mean.at("balanced_accuracy");
  });

  auto cell = [](const ComparisonRow& r, const std::string& m) {
    std::ostringstream os;
    const auto it = r.mean.find(m);
    if (it == r.mean.end()) return std::string("-");
    os << std::fixed << std::setprecision(2) << 100.0 * it->second;
    const auto sd = r.stddev.find(m);
    if (sd != r.stddev.end() && sd->second) os << " ± " << 100.0 * *sd->second;
    return os.str();
  };
  out << std::left << std::setw(14) << "method" << std::setw(6) << "runs";
  for (const auto& m : table.metrics) out << std::setw(20) << m;
  out << '\n';
  for (const auto& r : table.rows) {
    out << std::left << std::setw(14) << r.method << std::setw(6) << r.runs;
    for (const auto& m : table.metrics) {
      const auto text = cell(r, m);
      // "±" is two bytes but one column.
      const auto pad = text.find("±") == std::string::npos ? 20 : 21;
      out << std::setw(pad) << text;
    }
    out << '\n';
  }

  if (!csv_path.empty()) {
    if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw InvalidInput("cannot write " + csv_path.string());
    csv << "method,runs";
    for (const auto& m : table.metrics) csv << ',' << m << "_mean," << m << "_std";
    csv << '\n' << std::setprecision(17);
    for (const auto& r : table.rows) {
      csv << r.method << ',' << r.runs;
      for (const auto& m : table.metrics) {
        const auto it = r.mean.find(m);
        csv << ',';
        if (it != r.mean.end()) csv << it->second;
        csv << ',';
        const auto sd = r.stddev.find(m);
        if (sd != r.stddev.end() && sd->second) csv << *sd->second;
      }
      csv << '\n';
    }
    out << "table written to " << csv_path.string() << '\n';
  }
  return table;
}

// ---------------------------------------------------------------- entry point

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Long-tailed classification with Fourier prompt distillation from a frozen teacher"};
  app.require_subcommand(1);

  auto add_run_flags = [](CLI::App* cmd, RunOptions& o, bool with_resume) {
    cmd->add_option("--config", o.config, "experiment config (JSON); default: desk-scale preset");
    cmd->add_option("--method", o.method, "override the config's method");
    cmd->add_option("--seed", o.seed, "override the run seed");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--device", o.device, "compute device (cpu)");
    if (with_resume) cmd->add_flag("--resume", o.resume, "continue from the run's last checkpoint");
  };

  RunOptions build_opts, train_opts;
  auto* build = app.add_subcommand("build-dataset", "build split manifests and print per-class counts");
  add_run_flags(build, build_opts, false);
  auto* train = app.add_subcommand("train", "train one configured method");
  add_run_flags(train, train_opts, true);

  std::string eval_dir, eval_split = "test", eval_ckpt = "best";
  std::optional<std::string> eval_device;
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a run's saved student");
  evaluate->add_option("run_dir", eval_dir, "run directory")->required();
  evaluate->add_option("--split", eval_split, "train, val or test");
  evaluate->add_option("--checkpoint", eval_ckpt, "best, final, or a checkpoint path");
  evaluate->add_option("--device", eval_device, "compute device (cpu)");

  std::string inspect_dir;
  int64_t inspect_samples = 8;
  uint64_t inspect_seed = 0;
  auto* inspect = app.add_subcommand("inspect-prompts", "export prompt and prompted-image grids");
  inspect->add_option("run_dir", inspect_dir, "run directory")->required();
  inspect->add_option("--samples", inspect_samples, "number of test images");
  inspect->add_option("--seed", inspect_seed, "sampling seed");

  std::vector<std::string> compare_dirs;
  std::string compare_split = "test", compare_out;
  auto* compare = app.add_subcommand("compare", "tabulate metrics across runs");
  compare->add_option("run_dirs", compare_dirs, "run directories")->required();
  compare->add_option("--split", compare_split, "report split");
  compare->add_option("--out", compare_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return code;
  }

  try {
    if (*build) {
      cmd_build_dataset(build_opts, out);
    } else if (*train) {
      cmd_train(train_opts, out);
    } else if (*evaluate) {
      if (eval_device && *eval_device != "cpu") throw ConfigError("config field 'device': only 'cpu' is supported by this build");
      cmd_evaluate(eval_dir, eval_split, eval_ckpt, out);
    } else if (*inspect) {
      cmd_inspect_prompts(inspect_dir, inspect_samples, inspect_seed, out);
    } else if (*compare) {
      std::vector<fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
      cmd_compare(dirs, compare_split, compare_out.empty() ? fs::path("comparison.csv") : fs::path(compare_out), out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace fopro::cli

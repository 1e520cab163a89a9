#include "fopro/train.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "fopro/artifacts.hpp"
#include "fopro/checkpoint.hpp"
#include "fopro/errors.hpp"

namespace fopro {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Stream tags for derive_seed.
namespace {
constexpr uint64_t kOrderStream = 0x0d0d;
constexpr uint64_t kAugmentStream = 0xa06a;
constexpr uint64_t kPromptStream = 0x9e09;
constexpr uint64_t kStudentInitStream = 0x5717;
constexpr uint64_t kFpgInitStream = 0xf960;

constexpr double kBoundTolerance = 1e-4;
constexpr int64_t kEvalBatch = 256;

json monitor_json(const LossMonitor& m) {
  const auto mean = m.mean();
  if (!mean) return nullptr;
  return {{"mean", *mean}, {"min", m.min}, {"max", m.max}};
}

bool is_finite(double v) { return std::isfinite(v); }

}  // namespace

void LossMonitor::add(double v) {
  sum += v;
  min = std::min(min, v);
  max = std::max(max, v);
  ++count;
}

std::optional<double> LossMonitor::mean() const {
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

json EpochRecord::to_json() const {
  json j;
  j["epoch"] = epoch;
  j["phase"] = to_string(phase);
  j["batches"] = batches;
  j["lr"] = lr;
  j["loss"] = monitor_json(total);
  j["loss_target"] = monitor_json(target);
  j["loss_distill"] = monitor_json(distill);
  j["loss_bn"] = monitor_json(bn);
  j["loss_balance"] = monitor_json(balance);
  j["loss_inversion"] = monitor_json(inversion);
  if (val) {
    j["val"] = {{"accuracy", val->accuracy},
                {"balanced_accuracy", val->balanced_accuracy},
                {"mcc", val->mcc},
                {"macro_f1", val->macro_f1}};
  } else {
    j["val"] = nullptr;
  }
  j["improved"] = improved;
  return j;
}

// ---------------------------------------------------------------- assembly

data::DatasetManifest build_manifest(const ExperimentConfig& config) {
  const auto spec = config.longtail_spec();
  if (config.dataset.mode == "synthetic") {
    return data::synthetic_dataset_generate(spec, config.dataset.resolution, config.dataset_seed()).manifest;
  }
  return data::build_longtail_split(data::read_manifest(config.dataset.source_manifest), spec);
}

data::ImageLoader make_loader(const ExperimentConfig& config) {
  if (config.dataset.mode == "synthetic") {
    const auto spec = config.longtail_spec();
    return data::synthetic_or_file_loader(data::SyntheticImageGenerator(
        config.dataset_seed(), spec.num_classes(), config.dataset.resolution));
  }
  return data::file_image_loader(config.dataset.resolution);
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  ExperimentData d;
  d.spec = config.longtail_spec();
  d.manifest = build_manifest(config);
  const auto loader = make_loader(config);
  d.train = data::load_split(d.manifest, data::Split::train, loader);
  d.val = data::load_split(d.manifest, data::Split::val, loader);
  d.test = data::load_split(d.manifest, data::Split::test, loader);
  d.train_counts = d.manifest.class_counts(data::Split::train, d.spec.num_classes());
  d.grouping = shot_grouping(d.train_counts, config.dataset.head_min, config.dataset.tail_max);
  return d;
}

Teacher build_teacher(const ExperimentConfig& config) {
  if (!config.model.teacher_checkpoint.empty()) return load_teacher(config.model.teacher_checkpoint);
  torch::manual_seed(config.model.teacher_seed);
  Teacher teacher(config.model.teacher_arch, config.model.norm_mean, config.model.norm_std);
  const auto noise = data::pink_noise_images(config.model.calibration_images, config.dataset.resolution,
                                             config.model.teacher_seed);
  std::vector<torch::Tensor> batches;
  for (int64_t i = 0; i < noise.size(0); i += 32) {
    const auto end = std::min<int64_t>(i + 32, noise.size(0));
    if (end - i >= 2) batches.push_back(noise.slice(0, i, end));
  }
  teacher.calibrate_running_stats(batches);
  return teacher;
}

int64_t teacher_feature_dim(const ExperimentConfig& config) {
  if (!config.model.teacher_checkpoint.empty()) {
    CheckpointReader reader(config.model.teacher_checkpoint);
    return reader.read_int("meta/feature_dim");
  }
  return Backbone(config.model.teacher_arch)->feature_dim();
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(ExperimentConfig config, fs::path run_dir)
    : config_(std::move(config)), run_dir_(std::move(run_dir)) {
  config_.validate();
  at::set_num_threads(config_.threads);
  config_hash_ = config_hash(config_);
  data_ = load_experiment_data(config_);
  const int k = data_.spec.num_classes();
  const auto method = config_.method;

  if (method == Method::linear_probe || method == Method::fine_tune) {
    const auto teacher = build_teacher(config_);
    torch::manual_seed(data::derive_seed(config_.seed, kStudentInitStream));
    student_ = make_probe_model(teacher, k, method == Method::linear_probe ? TransferMode::linear_probe
                                                                          : TransferMode::fine_tune);
  } else {
    // Every method builds the same projection head so that students start
    // from identical weights for a given seed.
    const auto projection_dim = teacher_feature_dim(config_);
    torch::manual_seed(data::derive_seed(config_.seed, kStudentInitStream));
    student_ = StudentNet(config_.model.student_arch, k, projection_dim);
    if (uses_distillation(method)) {
      teacher_.emplace(build_teacher(config_));
      teacher_->lock_for_distillation();
      running_stats_ = teacher_->running_stats();
    }
  }

  std::vector<torch::Tensor> trainable;
  for (const auto& p : student_->parameters()) {
    if (p.requires_grad()) trainable.push_back(p);
  }
  if (config_.optimizer.name == "adam") {
    student_opt_ = std::make_unique<torch::optim::Adam>(
        trainable, torch::optim::AdamOptions(config_.optimizer.lr).weight_decay(config_.optimizer.weight_decay));
  } else {
    student_opt_ = std::make_unique<torch::optim::SGD>(
        trainable, torch::optim::SGDOptions(config_.optimizer.lr)
                       .momentum(config_.optimizer.momentum)
                       .weight_decay(config_.optimizer.weight_decay));
  }

  if (method == Method::fopro_kd) {
    PromptGeneratorOptions o;
    o.noise_dim = config_.fpg.noise_dim;
    o.channels = 3;
    o.height = config_.dataset.resolution;
    o.width = config_.dataset.resolution;
    o.init_weight_std = config_.fpg.init_weight_std;
    o.init_bias = config_.fpg.init_bias;
    o.init_seed = data::derive_seed(config_.seed, kFpgInitStream);
    fpg_.emplace(o);
    fpg_opt_ = std::make_unique<torch::optim::Adam>((*fpg_)->parameters(),
                                                    torch::optim::AdamOptions(config_.fpg.lr));
  }

  bsm_counts_ = data_.train_counts;
  const auto w = data::reweighting_weights(data_.train_counts);
  class_weights_ = torch::tensor(std::vector<float>(w.begin(), w.end()), torch::kFloat32);
}

uint64_t Trainer::order_seed(int epoch) const {
  return data::derive_seed(config_.seed, kOrderStream, static_cast<uint64_t>(epoch));
}
uint64_t Trainer::augment_seed(int epoch) const {
  return data::derive_seed(config_.seed, kAugmentStream, static_cast<uint64_t>(epoch));
}
uint64_t Trainer::prompt_seed(int epoch) const {
  return data::derive_seed(config_.seed, kPromptStream, static_cast<uint64_t>(epoch));
}

Phase Trainer::phase_of(int epoch) const {
  return config_.method == Method::fopro_kd ? config_.schedule.phase_of(epoch) : Phase::exploit;
}

std::vector<std::vector<std::size_t>> Trainer::epoch_batches(int epoch) {
  std::vector<std::size_t> order;
  if (config_.method == Method::rs) {
    data::ClassBalancedSampler sampler(data_.train.labels, data_.spec.num_classes(), order_seed(epoch));
    order = sampler.epoch();
  } else {
    order = data::shuffled_indices(static_cast<std::size_t>(data_.train.size()), order_seed(epoch));
  }
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t i = 0; i < order.size(); i += bs) {
    const auto end = std::min(order.size(), i + bs);
    // BN in train mode needs at least two samples.
    if (end - i < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

torch::Tensor Trainer::target_loss(const torch::Tensor& logits, const torch::Tensor& labels) const {
  namespace F = torch::nn::functional;
  switch (config_.method) {
    case Method::rw:
      return F::cross_entropy(logits, labels, F::CrossEntropyFuncOptions().weight(class_weights_));
    case Method::bsm:
    case Method::ekd:
    case Method::fopro_kd:
      return losses::balanced_softmax_loss(logits, labels, bsm_counts_);
    default:
      return F::cross_entropy(logits, labels);
  }
}

void Trainer::set_epoch_lr(int epoch) {
  double lr = config_.optimizer.lr;
  if (config_.optimizer.scheduler == "cosine") {
    lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / config_.schedule.max_epochs));
  }
  for (auto& group : student_opt_->param_groups()) group.options().set_lr(lr);
}

double Trainer::current_lr() const { return student_opt_->param_groups().front().options().get_lr(); }

void Trainer::check_finite(const EpochRecord& record, int64_t batch,
                           std::initializer_list<std::pair<const char*, double>> parts) const {
  bool ok = true;
  for (const auto& [name, v] : parts) ok = ok && is_finite(v);
  if (ok) return;
  std::ostringstream os;
  os << "non-finite loss in " << to_string(record.phase) << " epoch " << record.epoch << ", batch " << batch
     << ":";
  for (const auto& [name, v] : parts) os << ' ' << name << '=' << v;
  throw TrainingDiverged(os.str());
}

namespace {

void check_bound(const char* name, double v, double lo, double hi) {
  if (v < lo - kBoundTolerance || v > hi + kBoundTolerance) {
    std::ostringstream os;
    os << name << " = " << v << " left its bound [" << lo << ", " << hi << "]";
    throw ContractViolation(os.str());
  }
}

double clip(const std::vector<torch::Tensor>& params, double max_norm) {
  return torch::nn::utils::clip_grad_norm_(params, max_norm);
}

}  // namespace

EpochRecord Trainer::run_exploit_epoch() {
  const int epoch = state_.next_epoch;
  if (phase_of(epoch) != Phase::exploit) {
    throw ContractViolation("run_exploit_epoch called on explore epoch " + std::to_string(epoch));
  }
  set_epoch_lr(epoch);
  EpochRecord rec;
  rec.epoch = epoch;
  rec.phase = Phase::exploit;
  rec.lr = current_lr();

  const bool distill = uses_distillation(config_.method);
  const bool debug = config_.debug_phase_isolation;
  auto aug_gen = at::make_generator<at::CPUGeneratorImpl>(augment_seed(epoch));
  auto prompt_gen = at::make_generator<at::CPUGeneratorImpl>(prompt_seed(epoch));

  std::vector<torch::Tensor> params;
  for (const auto& group : student_opt_->param_groups()) {
    for (const auto& p : group.params()) params.push_back(p);
  }

  const auto teacher_hash0 = teacher_ ? state_hash(*teacher_->backbone()) : 0;
  const auto fpg_hash0 = fpg_ ? state_hash(**fpg_) : 0;

  student_->train();
  const auto batches = epoch_batches(epoch);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    uint64_t th = 0, fh = 0;
    if (debug) {
      th = teacher_ ? state_hash(*teacher_->backbone()) : 0;
      fh = fpg_ ? state_hash(**fpg_) : 0;
    }
    auto [x, y] = data_.train.batch(batches[b]);
    x = data::augment_batch(x, config_.augment, aug_gen);
    const auto out = student_->forward(x);
    const auto l_t = target_loss(out.logits, y);
    torch::Tensor loss = l_t;
    double l_f_value = 0.0;
    if (distill) {
      torch::Tensor t;
      {
        torch::NoGradGuard no_grad;
        torch::Tensor teacher_input = x;
        if (fpg_) {
          const auto alpha = torch::rand({x.size(0)}, prompt_gen, torch::kFloat32);
          const auto z = sample_noise(config_.fpg.noise_dim, prompt_gen);
          teacher_input = spectral::prompt_images(x, (*fpg_)->forward(z), alpha);
        }
        t = teacher_->forward(teacher_input, false).features;
      }
      const auto l_f = losses::ekd_loss(out.projection, t);
      loss = losses::exploitation_loss(l_t, l_f, config_.loss);
      l_f_value = l_f.item<double>();
    }
    const double l_t_value = l_t.item<double>();
    const double total = loss.item<double>();
    check_finite(rec, static_cast<int64_t>(b), {{"L_t", l_t_value}, {"L_f", l_f_value}, {"total", total}});

    student_opt_->zero_grad();
    loss.backward();
    clip(params, config_.grad_clip_norm);
    student_opt_->step();

    rec.total.add(total);
    rec.target.add(l_t_value);
    if (distill) {
      check_bound("L_f", l_f_value, 0.0, 4.0);
      rec.distill.add(l_f_value);
    }
    ++rec.batches;

    if (debug) {
      ++isolation_.steps_checked;
      const bool teacher_same = !teacher_ || state_hash(*teacher_->backbone()) == th;
      const bool fpg_same = !fpg_ || state_hash(**fpg_) == fh;
      if (!teacher_same || !fpg_same) {
        ++isolation_.violations;
        isolation_.messages.push_back("exploit epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                                      (teacher_same ? "" : ": teacher changed") + (fpg_same ? "" : ": FPG changed"));
      }
    }
  }

  if (teacher_ && state_hash(*teacher_->backbone()) != teacher_hash0) {
    throw ContractViolation("teacher changed during exploit epoch " + std::to_string(epoch));
  }
  if (fpg_ && state_hash(**fpg_) != fpg_hash0) {
    throw ContractViolation("FPG changed during exploit epoch " + std::to_string(epoch));
  }
  return rec;
}

EpochRecord Trainer::run_explore_epoch() {
  const int epoch = state_.next_epoch;
  if (!fpg_ || !teacher_) throw ContractViolation("run_explore_epoch needs a prompt generator and a teacher");
  if (phase_of(epoch) != Phase::explore) {
    throw ContractViolation("run_explore_epoch called on exploit epoch " + std::to_string(epoch));
  }
  EpochRecord rec;
  rec.epoch = epoch;
  rec.phase = Phase::explore;
  rec.lr = config_.fpg.lr;

  const bool debug = config_.debug_phase_isolation;
  auto aug_gen = at::make_generator<at::CPUGeneratorImpl>(augment_seed(epoch));
  auto prompt_gen = at::make_generator<at::CPUGeneratorImpl>(prompt_seed(epoch));
  const auto fpg_params = (*fpg_)->parameters();
  const double log_c = std::log(static_cast<double>(teacher_->feature_dim()));

  const auto teacher_hash0 = state_hash(*teacher_->backbone());
  const auto student_hash0 = state_hash(*student_);

  student_->eval();
  (*fpg_)->train();
  const auto batches = epoch_batches(epoch);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    uint64_t th = 0, sh = 0;
    if (debug) {
      th = state_hash(*teacher_->backbone());
      sh = state_hash(*student_);
    }
    auto [x, y] = data_.train.batch(batches[b]);
    x = data::augment_batch(x, config_.augment, aug_gen);
    torch::Tensor projection;
    {
      torch::NoGradGuard no_grad;
      projection = student_->forward(x).projection;
    }
    const auto alpha = torch::rand({x.size(0)}, prompt_gen, torch::kFloat32);
    const auto z = sample_noise(config_.fpg.noise_dim, prompt_gen);
    const auto x_hat = spectral::prompt_images(x, (*fpg_)->forward(z), alpha);
    const auto t_out = teacher_->forward(x_hat, true);
    const auto l_bn = losses::bn_regularization(t_out.batch_stats, running_stats_);
    const auto l_bal = losses::balance_loss(t_out.features);
    const auto l_inv = losses::inversion_loss(l_bn, l_bal, config_.loss);
    const auto l_f = losses::ekd_loss(projection, t_out.features);
    const auto loss = losses::exploration_loss(l_f, l_inv, config_.loss);

    const double bn_v = l_bn.item<double>(), bal_v = l_bal.item<double>(), inv_v = l_inv.item<double>();
    const double f_v = l_f.item<double>(), total = loss.item<double>();
    check_finite(rec, static_cast<int64_t>(b),
                 {{"L_BN", bn_v}, {"L_bal", bal_v}, {"L_inv", inv_v}, {"L_f", f_v}, {"total", total}});

    fpg_opt_->zero_grad();
    loss.backward();
    clip(fpg_params, config_.grad_clip_norm);
    fpg_opt_->step();

    check_bound("L_f", f_v, 0.0, 4.0);
    check_bound("L_BN", bn_v, 0.0, std::numeric_limits<double>::infinity());
    check_bound("L_bal", bal_v, -log_c, 0.0);
    rec.total.add(total);
    rec.distill.add(f_v);
    rec.bn.add(bn_v);
    rec.balance.add(bal_v);
    rec.inversion.add(inv_v);
    ++rec.batches;

    if (debug) {
      ++isolation_.steps_checked;
      const bool teacher_same = state_hash(*teacher_->backbone()) == th;
      const bool student_same = state_hash(*student_) == sh;
      if (!teacher_same || !student_same) {
        ++isolation_.violations;
        isolation_.messages.push_back("explore epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                                      (teacher_same ? "" : ": teacher changed") +
                                      (student_same ? "" : ": student changed"));
      }
    }
  }

  if (state_hash(*teacher_->backbone()) != teacher_hash0) {
    throw ContractViolation("teacher changed during explore epoch " + std::to_string(epoch));
  }
  if (state_hash(*student_) != student_hash0) {
    throw ContractViolation("student changed during explore epoch " + std::to_string(epoch));
  }
  return rec;
}

std::vector<int> predict_labels(StudentNet& student, const data::ImageSet& set) {
  torch::NoGradGuard no_grad;
  student->eval();
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(set.size()));
  std::vector<std::size_t> rows;
  for (int64_t i = 0; i < set.size(); i += kEvalBatch) {
    rows.clear();
    for (int64_t r = i; r < std::min(set.size(), i + kEvalBatch); ++r) rows.push_back(static_cast<std::size_t>(r));
    const auto [x, y] = set.batch(rows);
    const auto pred = student->forward(x).logits.argmax(1);
    const auto acc = pred.accessor<int64_t, 1>();
    for (int64_t r = 0; r < acc.size(0); ++r) out.push_back(static_cast<int>(acc[r]));
  }
  return out;
}

eval::ConfusionMatrix confusion_on(StudentNet& student, const data::ImageSet& set, int num_classes) {
  const auto pred = predict_labels(student, set);
  const std::vector<int> truth(set.labels.begin(), set.labels.end());
  return eval::ConfusionMatrix::from_predictions(truth, pred, num_classes);
}

std::vector<int> Trainer::predict(const data::ImageSet& set) { return predict_labels(student_, set); }

eval::ConfusionMatrix Trainer::confusion(data::Split split) {
  switch (split) {
    case data::Split::train: return confusion_on(student_, data_.train, data_.spec.num_classes());
    case data::Split::val: return confusion_on(student_, data_.val, data_.spec.num_classes());
    case data::Split::test: return confusion_on(student_, data_.test, data_.spec.num_classes());
    default: throw InvalidArgument("confusion: no images for the unassigned split");
  }
}

ValidationMetrics Trainer::validate() {
  const auto cm = confusion(data::Split::val);
  return {eval::accuracy(cm), eval::balanced_accuracy(cm).value, eval::mcc(cm), eval::macro_f1(cm)};
}

// ---------------------------------------------------------------- checkpoints

void Trainer::save_checkpoint(const fs::path& path) {
  CheckpointWriter w("training_state", config_.model.student_arch.to_string(), config_hash_);
  w.write_string("meta/method", to_string(config_.method));
  w.write_module("student", *student_);
  w.write_optimizer("optim/student", *student_opt_);
  if (fpg_) {
    w.write_module("fpg", **fpg_);
    w.write_optimizer("optim/fpg", *fpg_opt_);
  }
  w.write_int("state/next_epoch", state_.next_epoch);
  w.write_double("state/best_val_accuracy", state_.best_val_accuracy);
  w.write_int("state/best_epoch", state_.best_epoch);
  w.write_int("state/exploit_epochs_since_improvement", state_.exploit_epochs_since_improvement);
  w.write_int("state/stopped_early", state_.stopped_early ? 1 : 0);
  std::vector<int64_t> phases;
  for (const auto p : state_.phases_run) phases.push_back(p == Phase::exploit ? 0 : 1);
  w.write_tensor("state/phases_run", torch::tensor(phases, torch::kInt64));
  w.save(path);
}

void Trainer::load_checkpoint(const fs::path& path) {
  CheckpointReader r(path);
  if (r.role() != "training_state") {
    throw CheckpointError(path.string() + ": expected a training-state checkpoint, found role '" + r.role() + "'");
  }
  if (r.config_hash() != config_hash_) {
    throw CheckpointError(path.string() + ": written by a different configuration (hash " + r.config_hash() +
                          ", current " + config_hash_ + ")");
  }
  r.read_module("student", *student_);
  r.read_optimizer("optim/student", *student_opt_);
  if (fpg_) {
    r.read_module("fpg", **fpg_);
    r.read_optimizer("optim/fpg", *fpg_opt_);
  }
  state_.next_epoch = static_cast<int>(r.read_int("state/next_epoch"));
  state_.best_val_accuracy = r.read_double("state/best_val_accuracy");
  state_.best_epoch = static_cast<int>(r.read_int("state/best_epoch"));
  state_.exploit_epochs_since_improvement = static_cast<int>(r.read_int("state/exploit_epochs_since_improvement"));
  state_.stopped_early = r.read_int("state/stopped_early") != 0;
  state_.phases_run.clear();
  const auto phases = r.read_tensor("state/phases_run").contiguous();
  for (int64_t i = 0; i < phases.numel(); ++i) {
    state_.phases_run.push_back(phases[i].item<int64_t>() == 0 ? Phase::exploit : Phase::explore);
  }
}

// ---------------------------------------------------------------- loop

std::vector<json> read_metrics_log(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      break;  // torn final line from an interrupted write
    }
  }
  return out;
}

json report_document(const ExperimentConfig& config, const std::vector<std::string>& class_names,
                     const std::string& split, const eval::MetricsReport& report) {
  return {{"method", to_string(config.method)},
          {"seed", config.seed},
          {"split", split},
          {"class_names", class_names},
          {"metrics", eval::to_json(report)}};
}

void Trainer::write_reports(TrainingResult& result) {
  const auto& names = data_.spec.class_names;
  for (const auto split : {data::Split::val, data::Split::test}) {
    const auto cm = confusion(split);
    const auto report = eval::evaluate_confusion(cm, data_.grouping);
    const std::string name = data::to_string(split);
    (split == data::Split::val ? result.val_report : result.test_report) = report;
    std::ofstream(run_dir_ / ("report_" + name + ".json")) << report_document(config_, names, name, report).dump(2)
                                                           << '\n';
    std::ofstream(run_dir_ / ("confusion_" + name + ".csv")) << cm.to_csv(names);
    artifacts::write_confusion_svg(run_dir_ / "plots" / ("confusion_" + name + ".svg"), cm, names);
  }

  const auto log = read_metrics_log(run_dir_ / "metrics.jsonl");
  std::vector<artifacts::Series> loss_series, val_series;
  auto series_of = [&](const char* key, const char* label, std::vector<artifacts::Series>& into) {
    artifacts::Series s{label, {}, {}};
    for (const auto& r : log) {
      if (r.contains(key) && r[key].is_object() && r[key].contains("mean")) {
        s.x.push_back(r["epoch"].get<double>());
        s.y.push_back(r[key]["mean"].get<double>());
      }
    }
    if (!s.x.empty()) into.push_back(std::move(s));
  };
  series_of("loss_target", "target loss", loss_series);
  series_of("loss_distill", "distillation loss", loss_series);
  series_of("loss_inversion", "inversion loss", loss_series);
  for (const char* metric : {"accuracy", "balanced_accuracy", "mcc"}) {
    artifacts::Series s{metric, {}, {}};
    for (const auto& r : log) {
      if (r["val"].is_object()) {
        s.x.push_back(r["epoch"].get<double>());
        s.y.push_back(r["val"][metric].get<double>());
      }
    }
    if (!s.x.empty()) val_series.push_back(std::move(s));
  }
  artifacts::write_line_plot_svg(run_dir_ / "plots" / "loss_curves.svg", "Training losses", "epoch", "loss",
                                 loss_series);
  artifacts::write_line_plot_svg(run_dir_ / "plots" / "val_curves.svg", "Validation metrics", "epoch", "value",
                                 val_series);
}

TrainingResult Trainer::train(const TrainOptions& options) {
  fs::create_directories(run_dir_ / "checkpoints");
  fs::create_directories(run_dir_ / "plots");
  const auto ckpt_dir = run_dir_ / "checkpoints";
  const auto last_path = ckpt_dir / "last.ckpt";
  const auto log_path = run_dir_ / "metrics.jsonl";

  if (options.resume) {
    if (!fs::exists(last_path)) throw CheckpointError(last_path.string() + ": nothing to resume from");
    load_checkpoint(last_path);
    // Keep only the records the checkpoint covers.
    const auto log = read_metrics_log(log_path);
    std::ofstream out(log_path, std::ios::trunc);
    for (const auto& r : log) {
      if (r["epoch"].get<int>() < state_.next_epoch) out << r.dump() << '\n';
    }
  } else {
    state_ = {};
    std::ofstream(log_path, std::ios::trunc);
  }
  save_config(run_dir_ / "config.json", config_);
  data::write_manifest(run_dir_ / "manifest.csv", data_.manifest);

  TrainingResult result;
  const int max_epochs = config_.schedule.max_epochs;
  while (state_.next_epoch < max_epochs && !state_.stopped_early) {
    const int epoch = state_.next_epoch;
    const Phase phase = phase_of(epoch);
    EpochRecord rec = phase == Phase::exploit ? run_exploit_epoch() : run_explore_epoch();

    if (phase == Phase::exploit) {
      rec.val = validate();
      if (rec.val->accuracy > state_.best_val_accuracy) {
        state_.best_val_accuracy = rec.val->accuracy;
        state_.best_epoch = epoch;
        state_.exploit_epochs_since_improvement = 0;
        rec.improved = true;
        save_student(ckpt_dir / "best_student.ckpt", student_, config_hash_);
      } else if (++state_.exploit_epochs_since_improvement >= config_.schedule.early_stop_patience) {
        state_.stopped_early = true;
      }
    } else {
      save_prompt_generator(ckpt_dir / "fpg.ckpt", *fpg_, config_hash_);
    }

    state_.phases_run.push_back(phase);
    state_.next_epoch = epoch + 1;
    {
      std::ofstream out(log_path, std::ios::app);
      out << rec.to_json().dump() << '\n';
    }
    save_checkpoint(last_path);
    result.records.push_back(std::move(rec));
    if (options.stop_after_epoch && epoch >= *options.stop_after_epoch) {
      result.state = state_;
      return result;
    }
  }

  if (fpg_) save_prompt_generator(ckpt_dir / "fpg.ckpt", *fpg_, config_hash_);
  save_student(ckpt_dir / "final_student.ckpt", student_, config_hash_);
  if (state_.best_epoch >= 0) {
    const auto best = load_student(ckpt_dir / "best_student.ckpt");
    copy_state(*best, *student_);
  }
  result.state = state_;
  result.finished = true;
  if (options.write_artifacts) write_reports(result);
  return result;
}

}  // namespace fopro

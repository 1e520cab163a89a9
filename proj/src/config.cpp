#include "fopro/config.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "fopro/errors.hpp"

namespace fopro {

using nlohmann::json;

const char* to_string(Method method) {
  switch (method) {
    case Method::ce: return "ce";
    case Method::rs: return "rs";
    case Method::rw: return "rw";
    case Method::bsm: return "bsm";
    case Method::ekd: return "ekd";
    case Method::fopro_kd: return "fopro_kd";
    case Method::linear_probe: return "linear_probe";
    case Method::fine_tune: return "fine_tune";
  }
  return "?";
}

Method method_from_string(const std::string& text) {
  for (auto m : {Method::ce, Method::rs, Method::rw, Method::bsm, Method::ekd, Method::fopro_kd,
                 Method::linear_probe, Method::fine_tune}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError("config field 'method': unknown method '" + text +
                    "' (expected ce, rs, rw, bsm, ekd, fopro_kd, linear_probe, fine_tune)");
}

bool uses_teacher(Method method) {
  return method == Method::ekd || method == Method::fopro_kd || method == Method::linear_probe ||
         method == Method::fine_tune;
}

bool uses_distillation(Method method) { return method == Method::ekd || method == Method::fopro_kd; }

const char* to_string(Phase phase) { return phase == Phase::exploit ? "exploit" : "explore"; }

void PhaseSchedule::validate() const {
  if (exploit_epochs_per_cycle < 1 || explore_epochs_per_cycle < 1 || max_epochs < 1 ||
      early_stop_patience < 1) {
    throw ConfigError("config field 'schedule': all entries must be positive");
  }
  if (early_stop_patience > max_epochs) {
    throw ConfigError("config field 'schedule.early_stop_patience': must not exceed max_epochs");
  }
}

Phase PhaseSchedule::phase_of(int epoch) const {
  const int cycle = exploit_epochs_per_cycle + explore_epochs_per_cycle;
  return epoch % cycle < exploit_epochs_per_cycle ? Phase::exploit : Phase::explore;
}

std::vector<Phase> PhaseSchedule::sequence() const {
  std::vector<Phase> out;
  out.reserve(max_epochs);
  for (int e = 0; e < max_epochs; ++e) out.push_back(phase_of(e));
  return out;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw ConfigError("config field '" + field + "': " + msg);
  };
  if (dataset.mode != "synthetic" && dataset.mode != "files") {
    fail("dataset.mode", "must be 'synthetic' or 'files'");
  }
  if (dataset.mode == "files" && dataset.source_manifest.empty()) {
    fail("dataset.source_manifest", "required in files mode");
  }
  if (dataset.resolution < 8) fail("dataset.resolution", "must be at least 8");
  if (dataset.val_per_class < 1) fail("dataset.val_per_class", "must be positive");
  if (dataset.test_per_class < 1) fail("dataset.test_per_class", "must be positive");
  if (dataset.fixture.empty()) {
    const auto k = dataset.class_names.size();
    if (k < 2) fail("dataset.class_names", "need at least 2 classes");
    if (dataset.train_counts.size() != k) fail("dataset.train_counts", "needs one entry per class");
    if (dataset.mode == "synthetic" && dataset.full_counts.size() != k) {
      fail("dataset.full_counts", "needs one entry per class");
    }
  }
  if (dataset.head_min < dataset.tail_max) fail("dataset.head_min", "must be >= tail_max");
  try {
    loss.validate();
  } catch (const InvalidArgument& e) {
    fail("loss", e.what());
  }
  if (fpg.noise_dim < 1) fail("fpg.noise_dim", "must be positive");
  if (!(fpg.lr > 0.0)) fail("fpg.lr", "must be positive");
  if (optimizer.name != "adam" && optimizer.name != "sgd") fail("optimizer.name", "must be 'adam' or 'sgd'");
  if (!(optimizer.lr > 0.0)) fail("optimizer.lr", "must be positive");
  if (optimizer.scheduler != "none" && optimizer.scheduler != "cosine") {
    fail("optimizer.scheduler", "must be 'none' or 'cosine'");
  }
  schedule.validate();
  if (batch_size < 2) fail("batch_size", "must be at least 2");
  if (augment.pad < 0) fail("augment.pad", "must be >= 0");
  if (!(grad_clip_norm > 0.0)) fail("grad_clip_norm", "must be positive");
  if (threads < 1) fail("threads", "must be positive");
  if (device != "cpu") fail("device", "only 'cpu' is supported by this build");
  if (model.calibration_images < 2) fail("model.calibration_images", "must be at least 2");
  try {
    Backbone probe_teacher(model.teacher_arch);
    Backbone probe_student(model.student_arch);
  } catch (const InvalidArgument& e) {
    fail("model", e.what());
  }
}

data::LongTailSpec ExperimentConfig::longtail_spec() const {
  data::LongTailSpec spec;
  if (!dataset.fixture.empty()) {
    spec = data::load_longtail_fixture(dataset.fixture, dataset.imbalance_label);
  } else {
    spec.class_names = dataset.class_names;
    spec.full_counts = dataset.full_counts;
    spec.train_counts = dataset.train_counts;
    spec.imbalance_label = dataset.imbalance_label;
  }
  spec.val_per_class = dataset.val_per_class;
  spec.test_per_class = dataset.test_per_class;
  spec.seed = dataset_seed();
  return spec;
}

// ---------------------------------------------------------------- JSON

namespace {

json arch_json(const ArchSpec& a) { return {{"name", a.name}, {"widths", a.widths}}; }

// Reads keys from an object, remembering the dotted path for messages and
// rejecting keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config field '" + display() + "': expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field '" + child(key) + "': wrong type");
    }
  }

  Fields object(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Fields(j_.contains(key) ? j_.at(key) : empty, child(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("config field '" + child(item.key()) + "': unknown key");
    }
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_arch(Fields f, ArchSpec& arch) {
  f.get("name", arch.name);
  f.get("widths", arch.widths);
  f.finish();
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json dataset = {
      {"mode", c.dataset.mode},
      {"class_names", c.dataset.class_names},
      {"full_counts", c.dataset.full_counts},
      {"train_counts", c.dataset.train_counts},
      {"val_per_class", c.dataset.val_per_class},
      {"test_per_class", c.dataset.test_per_class},
      {"imbalance_label", c.dataset.imbalance_label},
      {"fixture", c.dataset.fixture},
      {"source_manifest", c.dataset.source_manifest},
      {"resolution", c.dataset.resolution},
      {"head_min", c.dataset.head_min},
      {"tail_max", c.dataset.tail_max},
  };
  dataset["seed"] = c.dataset.seed ? json(*c.dataset.seed) : json(nullptr);
  return {
      {"method", to_string(c.method)},
      {"seed", c.seed},
      {"dataset", dataset},
      {"model",
       {{"teacher_arch", arch_json(c.model.teacher_arch)},
        {"teacher_checkpoint", c.model.teacher_checkpoint},
        {"teacher_seed", c.model.teacher_seed},
        {"calibration_images", c.model.calibration_images},
        {"norm_mean", c.model.norm_mean},
        {"norm_std", c.model.norm_std},
        {"student_arch", arch_json(c.model.student_arch)}}},
      {"loss", {{"lambda_f", c.loss.lambda_f}, {"mu", c.loss.mu}, {"gamma", c.loss.gamma}}},
      {"fpg",
       {{"noise_dim", c.fpg.noise_dim},
        {"lr", c.fpg.lr},
        {"init_weight_std", c.fpg.init_weight_std},
        {"init_bias", c.fpg.init_bias}}},
      {"optimizer",
       {{"name", c.optimizer.name},
        {"lr", c.optimizer.lr},
        {"momentum", c.optimizer.momentum},
        {"weight_decay", c.optimizer.weight_decay},
        {"scheduler", c.optimizer.scheduler}}},
      {"schedule",
       {{"exploit_epochs_per_cycle", c.schedule.exploit_epochs_per_cycle},
        {"explore_epochs_per_cycle", c.schedule.explore_epochs_per_cycle},
        {"max_epochs", c.schedule.max_epochs},
        {"early_stop_patience", c.schedule.early_stop_patience}}},
      {"batch_size", c.batch_size},
      {"augment", {{"pad", c.augment.pad}, {"flip", c.augment.flip}}},
      {"grad_clip_norm", c.grad_clip_norm},
      {"threads", c.threads},
      {"debug_phase_isolation", c.debug_phase_isolation},
      {"device", c.device},
      {"out_dir", c.out_dir},
  };
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Fields root(j, "");
  std::string method = to_string(c.method);
  root.get("method", method);
  c.method = method_from_string(method);
  root.get("seed", c.seed);
  {
    auto d = root.object("dataset");
    d.get("mode", c.dataset.mode);
    d.get("class_names", c.dataset.class_names);
    d.get("full_counts", c.dataset.full_counts);
    d.get("train_counts", c.dataset.train_counts);
    d.get("val_per_class", c.dataset.val_per_class);
    d.get("test_per_class", c.dataset.test_per_class);
    d.get("imbalance_label", c.dataset.imbalance_label);
    d.get("fixture", c.dataset.fixture);
    d.get("source_manifest", c.dataset.source_manifest);
    d.get("resolution", c.dataset.resolution);
    d.get("head_min", c.dataset.head_min);
    d.get("tail_max", c.dataset.tail_max);
    json seed = nullptr;
    d.get("seed", seed);
    if (!seed.is_null()) {
      if (!seed.is_number_unsigned()) throw ConfigError("config field 'dataset.seed': wrong type");
      c.dataset.seed = seed.get<uint64_t>();
    }
    d.finish();
  }
  {
    auto m = root.object("model");
    read_arch(m.object("teacher_arch"), c.model.teacher_arch);
    m.get("teacher_checkpoint", c.model.teacher_checkpoint);
    m.get("teacher_seed", c.model.teacher_seed);
    m.get("calibration_images", c.model.calibration_images);
    m.get("norm_mean", c.model.norm_mean);
    m.get("norm_std", c.model.norm_std);
    read_arch(m.object("student_arch"), c.model.student_arch);
    m.finish();
  }
  {
    auto l = root.object("loss");
    l.get("lambda_f", c.loss.lambda_f);
    l.get("mu", c.loss.mu);
    l.get("gamma", c.loss.gamma);
    l.finish();
  }
  {
    auto f = root.object("fpg");
    f.get("noise_dim", c.fpg.noise_dim);
    f.get("lr", c.fpg.lr);
    f.get("init_weight_std", c.fpg.init_weight_std);
    f.get("init_bias", c.fpg.init_bias);
    f.finish();
  }
  {
    auto o = root.object("optimizer");
    o.get("name", c.optimizer.name);
    o.get("lr", c.optimizer.lr);
    o.get("momentum", c.optimizer.momentum);
    o.get("weight_decay", c.optimizer.weight_decay);
    o.get("scheduler", c.optimizer.scheduler);
    o.finish();
  }
  {
    auto s = root.object("schedule");
    s.get("exploit_epochs_per_cycle", c.schedule.exploit_epochs_per_cycle);
    s.get("explore_epochs_per_cycle", c.schedule.explore_epochs_per_cycle);
    s.get("max_epochs", c.schedule.max_epochs);
    s.get("early_stop_patience", c.schedule.early_stop_patience);
    s.finish();
  }
  root.get("batch_size", c.batch_size);
  {
    auto a = root.object("augment");
    a.get("pad", c.augment.pad);
    a.get("flip", c.augment.flip);
    a.finish();
  }
  root.get("grad_clip_norm", c.grad_clip_norm);
  root.get("threads", c.threads);
  root.get("debug_phase_isolation", c.debug_phase_isolation);
  root.get("device", c.device);
  root.get("out_dir", c.out_dir);
  root.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  auto config = config_from_json(j);
  config.validate();
  return config;
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << to_json(config).dump(2) << '\n';
}

std::string config_hash(const ExperimentConfig& config) {
  auto j = to_json(config);
  for (const char* key : {"out_dir", "device", "threads", "debug_phase_isolation"}) j.erase(key);
  const auto text = j.dump();
  uint64_t h = 1469598103934665603ULL;
  for (const unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

ExperimentConfig desk_config(Method method, uint64_t seed) {
  ExperimentConfig c;
  c.method = method;
  c.seed = seed;
  c.dataset.mode = "synthetic";
  c.dataset.class_names = {"c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7"};
  c.dataset.train_counts = {400, 200, 120, 70, 40, 20, 10, 4};
  c.dataset.val_per_class = 10;
  c.dataset.test_per_class = 20;
  c.dataset.full_counts.clear();
  for (const auto n : c.dataset.train_counts) c.dataset.full_counts.push_back(n + 30);
  c.dataset.imbalance_label = "1:100";
  c.dataset.resolution = 32;
  c.dataset.seed = 7;
  c.dataset.head_min = 100;
  c.dataset.tail_max = 20;
  c.schedule.max_epochs = 18;
  c.schedule.early_stop_patience = 10;
  c.fpg.noise_dim = 4;
  c.fpg.lr = 1.0;
  c.out_dir = "";
  return c;
}

}  // namespace fopro

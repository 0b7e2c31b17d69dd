#include "dis2/config.h"

#include <fstream>
#include <set>
#include <sstream>

namespace dis2 {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json synthetic_to_json(const SyntheticSpec& s) {
  json j;
  j["num_classes"] = s.num_classes;
  j["patch_size"] = s.patch_size;
  j["num_patches"] = s.num_patches;
  j["seed"] = s.seed;
  j["class_frequency"] = s.class_frequency;
  auto& a = j["signal_assignment"] = json::array();
  for (auto v : s.signal_assignment) a.push_back(to_string(v));
  return j;
}

SyntheticSpec synthetic_from_json(const json& j) {
  reject_unknown(j, {"num_classes", "patch_size", "num_patches", "seed", "class_frequency", "signal_assignment"},
                 "dataset.synthetic");
  SyntheticSpec s = SyntheticSpec::defaults();
  read(j, "num_classes", s.num_classes);
  read(j, "patch_size", s.patch_size);
  read(j, "num_patches", s.num_patches);
  read(j, "seed", s.seed);
  read(j, "class_frequency", s.class_frequency);
  if (j.contains("signal_assignment")) {
    s.signal_assignment.clear();
    for (const auto& v : j.at("signal_assignment")) s.signal_assignment.push_back(parse_signal_assignment(v.get<std::string>()));
  }
  return s;
}

}  // namespace

std::string Toggles::name() const {
  std::string s = "HF";
  if (classwise) s += "+CW";
  if (dlkd) s += "+DLKD";
  return s;
}

ColorMap isprs_color_map() {
  return {{{255, 255, 255}, {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}}};
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m;
  m.num_classes = num_classes;
  m.base_width = base_width;
  m.patch_size = patch_size;
  m.classwise = toggles.classwise;
  return m;
}

uint64_t ExperimentConfig::architecture_hash() const {
  const auto m = model_config();
  std::ostringstream os;
  os << "dis2-arch-v1;K=" << m.num_classes << ";base=" << m.base_width << ";patch=" << m.patch_size
     << ";cw=" << m.classwise << ";layers=" << m.transformer_layers << ";heads=" << m.transformer_heads;
  return fnv1a(os.str());
}

void ExperimentConfig::validate() const {
  model_config().validate();
  if (source == DatasetSource::Synthetic) {
    synthetic.validate();
    if (synthetic.num_classes != num_classes)
      throw ConfigError("synthetic num_classes (" + std::to_string(synthetic.num_classes) +
                        ") differs from model num_classes (" + std::to_string(num_classes) + ")");
    if (synthetic.patch_size != patch_size) throw ConfigError("synthetic patch_size differs from model patch_size");
    if (eval_patches < 1) throw ConfigError("eval_patches must be >= 1");
  } else {
    if (isprs.root.empty()) throw ConfigError("dataset.isprs.root is required for the isprs source");
    if (static_cast<int>(isprs.colors.colors.size()) != num_classes)
      throw ConfigError("dataset.isprs.colors needs one colour per class");
    if (isprs.stride < 1) throw ConfigError("dataset.isprs.stride must be >= 1");
  }
  if (optim.steps < 0 || optim.batch_size < 1) throw ConfigError("optim: steps >= 0 and batch_size >= 1 required");
  if (!(optim.learning_rate > 0.0)) throw ConfigError("optim: learning_rate must be positive");
  if (optim.warmup_steps < 0) throw ConfigError("optim: warmup_steps must be >= 0");
  if (!(loss.temperature > 0.0)) throw ConfigError("loss: temperature must be positive");
}

json ExperimentConfig::to_json() const {
  json j;
  auto& d = j["dataset"];
  d["source"] = source == DatasetSource::Synthetic ? "synthetic" : "isprs";
  d["synthetic"] = synthetic_to_json(synthetic);
  d["eval_patches"] = eval_patches;
  d["isprs"]["root"] = isprs.root.string();
  d["isprs"]["stride"] = isprs.stride;
  auto& colors = d["isprs"]["colors"] = json::array();
  for (const auto& c : isprs.colors.colors) colors.push_back({c[0], c[1], c[2]});
  j["model"] = {{"num_classes", num_classes}, {"patch_size", patch_size}, {"base_width", base_width}};
  j["toggles"] = {{"classwise", toggles.classwise}, {"dlkd", toggles.dlkd}};
  j["loss"] = {{"seg_full", loss.seg_full},         {"seg_miss", loss.seg_miss},
               {"orth", loss.orth},                 {"distill_feat", loss.distill_feat},
               {"distill_logit", loss.distill_logit}, {"aux", loss.aux},
               {"uni", loss.uni},                   {"temperature", loss.temperature}};
  j["optim"] = {{"learning_rate", optim.learning_rate}, {"min_learning_rate", optim.min_learning_rate},
                {"weight_decay", optim.weight_decay},   {"grad_clip", optim.grad_clip},
                {"warmup_steps", optim.warmup_steps},   {"steps", optim.steps},
                {"batch_size", optim.batch_size}};
  j["augment"] = augment;
  j["seed"] = seed;
  j["output_dir"] = output_dir.string();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  reject_unknown(j, {"dataset", "model", "toggles", "loss", "optim", "augment", "seed", "output_dir"}, "config");
  ExperimentConfig c;
  c.isprs.colors = isprs_color_map();
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d, {"source", "synthetic", "eval_patches", "isprs"}, "dataset");
    std::string source = "synthetic";
    read(d, "source", source);
    if (source == "synthetic") c.source = DatasetSource::Synthetic;
    else if (source == "isprs") c.source = DatasetSource::Isprs;
    else throw ConfigError("dataset.source must be 'synthetic' or 'isprs'");
    if (d.contains("synthetic")) c.synthetic = synthetic_from_json(d.at("synthetic"));
    read(d, "eval_patches", c.eval_patches);
    if (d.contains("isprs")) {
      const auto& i = d.at("isprs");
      reject_unknown(i, {"root", "stride", "colors"}, "dataset.isprs");
      std::string root;
      read(i, "root", root);
      c.isprs.root = root;
      read(i, "stride", c.isprs.stride);
      if (i.contains("colors")) {
        c.isprs.colors.colors.clear();
        for (const auto& rgb : i.at("colors")) {
          if (!rgb.is_array() || rgb.size() != 3) throw ConfigError("dataset.isprs.colors entries must be [r, g, b]");
          c.isprs.colors.colors.push_back({rgb[0].get<uint8_t>(), rgb[1].get<uint8_t>(), rgb[2].get<uint8_t>()});
        }
      }
    }
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m, {"num_classes", "patch_size", "base_width"}, "model");
    read(m, "num_classes", c.num_classes);
    read(m, "patch_size", c.patch_size);
    read(m, "base_width", c.base_width);
  }
  if (j.contains("toggles")) {
    const auto& t = j.at("toggles");
    reject_unknown(t, {"classwise", "dlkd"}, "toggles");
    read(t, "classwise", c.toggles.classwise);
    read(t, "dlkd", c.toggles.dlkd);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    reject_unknown(l, {"seg_full", "seg_miss", "orth", "distill_feat", "distill_logit", "aux", "uni", "temperature"},
                   "loss");
    read(l, "seg_full", c.loss.seg_full);
    read(l, "seg_miss", c.loss.seg_miss);
    read(l, "orth", c.loss.orth);
    read(l, "distill_feat", c.loss.distill_feat);
    read(l, "distill_logit", c.loss.distill_logit);
    read(l, "aux", c.loss.aux);
    read(l, "uni", c.loss.uni);
    read(l, "temperature", c.loss.temperature);
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    reject_unknown(o,
                   {"learning_rate", "min_learning_rate", "weight_decay", "grad_clip", "warmup_steps", "steps",
                    "batch_size"},
                   "optim");
    read(o, "learning_rate", c.optim.learning_rate);
    read(o, "min_learning_rate", c.optim.min_learning_rate);
    read(o, "weight_decay", c.optim.weight_decay);
    read(o, "grad_clip", c.optim.grad_clip);
    read(o, "warmup_steps", c.optim.warmup_steps);
    read(o, "steps", c.optim.steps);
    read(o, "batch_size", c.optim.batch_size);
  }
  read(j, "augment", c.augment);
  read(j, "seed", c.seed);
  std::string out;
  read(j, "output_dir", out);
  if (!out.empty()) c.output_dir = out;
  c.validate();
  return c;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  auto spec = synthetic_from_json(j);
  spec.validate();
  return spec;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << config.to_json().dump(2) << '\n';
}

std::vector<SamplePatch> load_training_set(const ExperimentConfig& config) {
  if (config.source == DatasetSource::Synthetic) return generate_synthetic(config.synthetic);
  return load_isprs_tiles(config.isprs.root, Split::Train, config.patch_size, config.isprs.stride, config.isprs.colors);
}

std::vector<SamplePatch> load_evaluation_set(const ExperimentConfig& config) {
  if (config.source == DatasetSource::Synthetic) {
    auto spec = config.synthetic;
    spec.seed = config.synthetic.seed ^ 0x5eed5eedULL;
    spec.num_patches = config.eval_patches;
    return generate_synthetic(spec);
  }
  // Evaluation uses non-overlapping tiling.
  return load_isprs_tiles(config.isprs.root, Split::Test, config.patch_size, config.patch_size, config.isprs.colors);
}

}  // namespace dis2

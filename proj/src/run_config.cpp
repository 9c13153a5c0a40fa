#include "hrmedseg/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace hrmedseg {

double TrainConfig::lr_at(Index epoch) const { return lr * std::pow(decay_factor, static_cast<double>(epoch)); }

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(decay_factor > 0 && decay_factor <= 1)) throw ConfigError("decay_factor must be in (0, 1]");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 0 || distill_epochs < 0) throw ConfigError("epoch counts must be nonnegative");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1))
    throw ConfigError("adam betas must be in [0, 1)");
  if (!(adam.eps > 0)) throw ConfigError("adam eps must be positive");
  if (adam.grad_clip < 0) throw ConfigError("grad_clip must be nonnegative");
  if (image_size < 1) throw ConfigError("image_size must be positive");
  if (samples < 2) throw ConfigError("samples must be at least 2");
  if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("val_fraction must be in (0, 1)");
  loss.validate();
  model.validate();
  if (data.empty()) model.validate_input(image_size, image_size);
}

TrainConfig TrainConfig::for_profile(const std::string& name) {
  TrainConfig c;
  c.profile = name;
  if (name == "toy") {
    c.model = ModelConfig::toy();
    c.image_size = 64;
    c.epochs = 50;
    c.lr = 5e-4;
    c.batch_size = 8;
  } else if (name == "paper") {
    c.model = ModelConfig::paper();
    c.image_size = 1024;
    c.epochs = 200;
  } else {
    throw ConfigError("unknown profile '" + name + "' (expected toy or paper)");
  }
  c.model.seed = c.seed;
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value for " + key + ": '" + text + "'");
  return v;
}

std::vector<Index> parse_list(const std::string& key, const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<Index>(key, trim(item)));
  return out;
}

std::string show(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string show_list(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  std::string name, help;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define HRMEDSEG_INDEX_KEY(name, field, help)                                                          \
  Key {                                                                                                \
    name, help, [](TrainConfig& c, const std::string& v) { c.field = parse_number<Index>(name, v); }, \
        [](const TrainConfig& c) { return std::to_string(c.field); }                                   \
  }
#define HRMEDSEG_REAL_KEY(name, field, help)                                                            \
  Key {                                                                                                 \
    name, help, [](TrainConfig& c, const std::string& v) { c.field = parse_number<double>(name, v); }, \
        [](const TrainConfig& c) { return show(c.field); }                                              \
  }
#define HRMEDSEG_TEXT_KEY(name, field, help)                                                                     \
  Key {                                                                                                          \
    name, help, [](TrainConfig& c, const std::string& v) { c.field = v; }, [](const TrainConfig& c) { return c.field; } \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      HRMEDSEG_REAL_KEY("lr", lr, "initial learning rate"),
      HRMEDSEG_REAL_KEY("decay_factor", decay_factor, "per-epoch learning-rate decay"),
      HRMEDSEG_INDEX_KEY("batch_size", batch_size, "images per optimisation step"),
      HRMEDSEG_INDEX_KEY("epochs", epochs, "segmentation epochs"),
      HRMEDSEG_INDEX_KEY("distill_epochs", distill_epochs, "distillation epochs"),
      HRMEDSEG_REAL_KEY("beta1", adam.beta1, "Adam first-moment decay"),
      HRMEDSEG_REAL_KEY("beta2", adam.beta2, "Adam second-moment decay"),
      HRMEDSEG_REAL_KEY("eps", adam.eps, "Adam epsilon"),
      HRMEDSEG_REAL_KEY("grad_clip", adam.grad_clip, "global gradient-norm clip, 0 = off"),
      HRMEDSEG_REAL_KEY("w_dice", loss.w_dice, "Dice loss weight"),
      HRMEDSEG_REAL_KEY("w_focal", loss.w_focal, "focal loss weight"),
      HRMEDSEG_REAL_KEY("focal_alpha", loss.focal_alpha, "focal alpha"),
      HRMEDSEG_REAL_KEY("focal_gamma", loss.focal_gamma, "focal gamma"),
      HRMEDSEG_REAL_KEY("dice_smooth", loss.dice_smooth, "Dice smoothing constant"),
      Key{"seed", "seed for init, data, split and shuffling",
          [](TrainConfig& c, const std::string& v) {
            c.seed = parse_number<std::uint64_t>("seed", v);
            c.model.seed = c.seed;
          },
          [](const TrainConfig& c) { return std::to_string(c.seed); }},
      Key{"precision", "f32 or f64",
          [](TrainConfig& c, const std::string& v) {
            if (v == "f32") c.precision = Precision::f32;
            else if (v == "f64") c.precision = Precision::f64;
            else throw ConfigError("bad value for precision: '" + v + "' (expected f32 or f64)");
          },
          [](const TrainConfig& c) { return std::string(c.precision == Precision::f32 ? "f32" : "f64"); }},
      HRMEDSEG_INDEX_KEY("image_size", image_size, "side of generated images"),
      HRMEDSEG_INDEX_KEY("samples", samples, "number of generated samples"),
      HRMEDSEG_REAL_KEY("val_fraction", val_fraction, "held-out fraction"),
      Key{"teacher_seed", "seed of the stand-in teacher",
          [](TrainConfig& c, const std::string& v) { c.teacher_seed = parse_number<std::uint64_t>("teacher_seed", v); },
          [](const TrainConfig& c) { return std::to_string(c.teacher_seed); }},
      HRMEDSEG_TEXT_KEY("data", data, "dataset manifest (id, image, mask per line); empty = synthetic"),
      HRMEDSEG_TEXT_KEY("teacher_features", teacher_features, "teacher feature container; empty = stand-in"),
      HRMEDSEG_TEXT_KEY("init", init, "checkpoint to initialise from"),
      HRMEDSEG_TEXT_KEY("checkpoint", checkpoint, "checkpoint path (written by train/distill, read by infer/eval)"),
      HRMEDSEG_TEXT_KEY("metrics", metrics, "per-epoch metrics CSV"),
      HRMEDSEG_INDEX_KEY("c1", model.c1, "embedding channels"),
      HRMEDSEG_INDEX_KEY("depth", model.depth, "encoder blocks"),
      HRMEDSEG_INDEX_KEY("n_mbconv", model.n_mbconv, "convolutional encoder blocks"),
      HRMEDSEG_INDEX_KEY("attn_dim", model.attn_dim, "attention projection width d"),
      HRMEDSEG_INDEX_KEY("heads", model.heads, "attention heads"),
      HRMEDSEG_INDEX_KEY("patch_size", model.patch_size, "patch size S"),
      HRMEDSEG_INDEX_KEY("expansion_ratio", model.expansion_ratio, "hidden width / C1"),
      HRMEDSEG_INDEX_KEY("num_classes", model.num_classes, "output channels C2"),
      HRMEDSEG_INDEX_KEY("decoder_dim", model.decoder_dim, "decoder width D"),
      HRMEDSEG_INDEX_KEY("decoder_layers", model.decoder_layers, "cross-attention rounds"),
      HRMEDSEG_INDEX_KEY("mask_mlp_depth", model.mask_mlp_depth, "layers of the query MLP"),
      HRMEDSEG_INDEX_KEY("upsample_channels_1", model.upsample_channels_1, "first upsampling width"),
      HRMEDSEG_INDEX_KEY("upsample_channels_2", model.upsample_channels_2, "second upsampling width"),
      Key{"pool_kernels", "average-pool kernel sizes, comma separated",
          [](TrainConfig& c, const std::string& v) { c.model.pool_kernels = parse_list("pool_kernels", v); },
          [](const TrainConfig& c) { return show_list(c.model.pool_kernels); }},
      Key{"attention", "dgla or softmax",
          [](TrainConfig& c, const std::string& v) {
            try {
              c.model.attention = parse_attention_kind(v);
            } catch (const std::exception& e) {
              throw ConfigError(e.what());
            }
          },
          [](const TrainConfig& c) { return to_string(c.model.attention); }},
  };
  return table;
}

#undef HRMEDSEG_INDEX_KEY
#undef HRMEDSEG_REAL_KEY
#undef HRMEDSEG_TEXT_KEY

}  // namespace

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const auto list = [] {
    std::vector<std::pair<std::string, std::string>> out{{"profile", "toy or paper defaults"}};
    for (const auto& k : keys()) out.emplace_back(k.name, k.help);
    return out;
  }();
  return list;
}

void apply_setting(TrainConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : keys())
    if (k.name == key) return k.set(config, value);
  if (key == "profile") throw ConfigError("profile must be resolved before other settings");
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

TrainConfig build_config(const std::string& config_path,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::vector<std::pair<std::string, std::string>> file;
  if (!config_path.empty()) file = read_config_file(config_path);
  std::string profile = "toy";
  for (const auto& [k, v] : file)
    if (k == "profile") profile = v;
  for (const auto& [k, v] : overrides)
    if (k == "profile") profile = v;
  TrainConfig config = TrainConfig::for_profile(profile);
  for (const auto& list : {file, overrides})
    for (const auto& [k, v] : list)
      if (k != "profile") apply_setting(config, k, v);
  config.validate();
  return config;
}

std::string format_config(const TrainConfig& config) {
  std::string out = "profile = " + config.profile + "\n";
  for (const auto& k : keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

}  // namespace hrmedseg

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hrmedseg/config.hpp"
#include "hrmedseg/losses.hpp"
#include "hrmedseg/optim.hpp"

namespace hrmedseg {

enum class Precision { f32, f64 };

// Everything a run needs. Model hyperparameters live in `model`; `seed`
// drives parameter init, data generation, the split and the shuffles.
struct TrainConfig {
  std::string profile = "toy";
  ModelConfig model = ModelConfig::toy();
  Precision precision = Precision::f32;

  double lr = 1e-4;
  double decay_factor = 0.98;  // lr_e = lr * decay_factor^e
  Index batch_size = 16;
  Index epochs = 200;
  Index distill_epochs = 20;
  AdamConfig adam;
  LossWeights loss;
  std::uint64_t seed = 0;

  Index image_size = 1024;
  Index samples = 200;
  double val_fraction = 0.1;
  std::uint64_t teacher_seed = 0;

  std::string data;              // dataset manifest; empty -> synthetic shapes
  std::string teacher_features;  // container of per-image teacher features; empty -> stand-in teacher
  std::string init;              // checkpoint to start from
  std::string checkpoint = "hrmedseg_best.hrms";
  std::string metrics = "hrmedseg_metrics.csv";

  double lr_at(Index epoch) const;
  void validate() const;

  // "toy": 64^2 images, C1=32, L=6, d=32, patch 8, one decoder round, batch 8,
  // lr 5e-4, 50 epochs. "paper": 1024^2 and the
  // full-size architecture with the published optimisation recipe.
  static TrainConfig for_profile(const std::string& name);
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Every key accepted by apply_setting, in documentation order, with a one-line
// description.
const std::vector<std::pair<std::string, std::string>>& config_keys();

// Sets one key from its textual value. Unknown keys and malformed values
// throw ConfigError. "profile" is not accepted here (see build_config).
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);

// Parses "key = value" lines; '#' starts a comment, blank lines are skipped,
// list values are comma-separated. Duplicate keys are errors.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path);

// Profile defaults, then the file's settings, then `overrides` in order. The
// profile comes from the overrides if given there, else from the file.
TrainConfig build_config(const std::string& config_path,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

// key = value dump that read_config_file accepts and that reproduces `config`.
std::string format_config(const TrainConfig& config);

}  // namespace hrmedseg

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "duw/attacks.hpp"
#include "duw/fl.hpp"
#include "duw/injection.hpp"
#include "duw/tensor.hpp"

namespace duw {

/// Parses the TOML subset used by run configs: [section] / [a.b] headers,
/// key = value with strings, integers, floats, booleans and flat arrays,
/// '#' comments. Throws "config-error" with the line number.
nlohmann::json parse_toml(const std::string& text);

/// Recursively overlays `patch` onto `base`.
void merge_json(nlohmann::json& base, const nlohmann::json& patch);

struct DataSpec {
  std::string source = "synthetic";  // synthetic | idx
  std::vector<std::string> domains{"plain"};
  int train_per_client = 500;
  int test_count = 1000;
  ImageShape shape{1, 16, 16};
  std::string train_images, train_labels, test_images, test_labels;  // idx source
};

struct PartitionSpec {
  std::string kind = "class";  // class | dirichlet | domain
  int clients = 10;
  int classes_per_client = 3;
  double alpha = 0.5;
};

struct ModelSpec {
  std::string arch = "small_cnn";  // small_cnn | identity
  int latent = 64;
  bool batch_norm = false;
  int conv1 = 8;
  int conv2 = 16;
};

struct WatermarkSpec {
  // none | duw | classifier (decoder-free ablation) | badnet-random-noise | badnet-zero-one
  std::string mode = "duw";
  int key_length = 0;  // 0: smallest power of two that fits the clients
  int trigger_size = 50;
  double sigma = 0.5;
  int leakers = 0;  // 0: every client
  bool baseline = true;
  bool unified = false;
  int unified_steps = 10;
  float unified_lr = 0.01f;
  int unified_target = 0;
  int unified_size = 50;
};

struct OodSpec {
  std::string source = "held-out-domain";
  std::string domain = "blocky";
  int pool_size = 500;
};

struct EncoderSpec {
  float epsilon = 8.0f / 255.0f;
  int corpus_size = 2000;
  std::uint64_t seed = 0;
  int max_steps = 30000;
  float lr = 2e-3f;
  std::string cache = ".duw-cache";
};

struct AttackSpec {
  std::vector<std::string> kinds;  // finetune | prune | extract | perturb | detect
  int malicious = 10;
  int epochs = 50;
  float lr = 1e-5f;
  int batch_size = 32;
  std::vector<double> prune_rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> alphas{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  std::string aux_domain = "cluttered";
  int aux_size = 2000;
  int extract_epochs = 20;
  float extract_lr = 1e-3f;
  bool warm_start = true;
  int cleanse_steps = 300;
  float cleanse_lr = 0.1f;
  double cleanse_lambda = 1e-2;
  int plant_epochs = 15;
  float plant_lr = 0.01f;
  int plant_size = 2000;
};

struct RunConfig {
  std::string name = "custom";
  bool desk_runnable = true;
  std::uint64_t seed = 1;
  DataSpec data;
  PartitionSpec partition;
  ModelSpec model;
  int rounds = 30;
  RoundConfig round;  // injection_start_round lives here
  InjectionConfig injection;
  WatermarkSpec watermark;
  OodSpec ood;
  EncoderSpec encoder;
  AttackSpec attack;

  int key_length() const;
  /// Throws "config-error" when the settings contradict each other.
  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);

const std::vector<std::string>& preset_names();
/// Embedded preset as a config tree (base settings merged with the preset's
/// overrides); throws "unknown-preset".
nlohmann::json preset_json(const std::string& name);

/// Preset (if any), then config file (if any), then the seed override.
RunConfig load_run_config(const std::optional<std::string>& preset, const std::optional<std::string>& path,
                          std::optional<std::uint64_t> seed);

}  // namespace duw

#include <map>

#include "duw/config.hpp"

namespace duw {

namespace {

// Desk-scale digits federation: 10 classes, 10 clients holding 3 classes each.
const char* const desk_base = R"(
seed = 1

[data]
source = "synthetic"
domains = ["plain"]
train_per_client = 500
test_count = 1000
shape = [1, 16, 16]

[partition]
kind = "class"
clients = 10
classes_per_client = 3

[model]
arch = "small_cnn"
latent = 64
conv1 = 8
conv2 = 16

[federation]
rounds = 30
local_steps = 50
local_lr = 0.01
batch_size = 32
start_round = 5

[injection]
steps = 10
lr = 0.005
beta = 0.1

[watermark]
mode = "duw"
trigger_size = 50
sigma = 0.5

[ood]
source = "held-out-domain"
domain = "blocky"
pool_size = 500

[encoder]
epsilon = 0.03137254901960784
corpus_size = 2000
max_steps = 30000
)";

struct Preset {
  const char* overrides;
  bool desk_base = true;
};

const std::map<std::string, Preset>& presets() {
  static const std::map<std::string, Preset> p{
      {"benchmark-digits-desk", {R"(name = "benchmark-digits-desk")"}},
      {"benchmark-multidomain-desk", {R"(
name = "benchmark-multidomain-desk"
[data]
domains = ["plain", "inverted", "cluttered", "bold"]
train_per_client = 400
[partition]
kind = "domain"
clients = 12
[federation]
local_lr = 0.05
)"}},
      {"pitfall-badnet", {R"(
name = "pitfall-badnet"
[partition]
clients = 40
[federation]
rounds = 9
[watermark]
mode = "badnet-random-noise"
baseline = false
)"}},
      {"ablate-decoder", {R"(
name = "ablate-decoder"
[partition]
clients = 40
[federation]
rounds = 9
[watermark]
mode = "classifier"
baseline = false
)"}},
      {"ablate-beta", {R"(
name = "ablate-beta"
[federation]
rounds = 9
[injection]
beta = 0.0
)"}},
      {"ablate-ood", {R"(
name = "ablate-ood"
[ood]
source = "random-noise"
)"}},
      {"ablate-trigger-size", {R"(
name = "ablate-trigger-size"
[watermark]
trigger_size = 300
)"}},
      {"ablate-start-round", {R"(
name = "ablate-start-round"
[federation]
start_round = 15
)"}},
      {"robust-finetune", {R"(
name = "robust-finetune"
[attack]
kinds = ["finetune"]
epochs = 50
lr = 1e-5
)"}},
      {"robust-prune", {R"(
name = "robust-prune"
[attack]
kinds = ["prune"]
prune_rates = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
epochs = 50
lr = 1e-5
)"}},
      {"robust-extract", {R"(
name = "robust-extract"
[attack]
kinds = ["extract"]
aux_domain = "cluttered"
aux_size = 2000
extract_epochs = 20
extract_lr = 0.001
warm_start = true
)"}},
      {"robust-perturb", {R"(
name = "robust-perturb"
[attack]
kinds = ["perturb"]
alphas = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1]
)"}},
      {"robust-detect", {R"(
name = "robust-detect"
[attack]
kinds = ["detect"]
malicious = 3
)"}},
      {"hybrid", {R"(
name = "hybrid"
[watermark]
unified = true
unified_steps = 10
unified_lr = 0.01
unified_target = 0
)"}},
      // Paper-scale settings, kept for reference. They need real datasets
      // in IDX form and far more compute than a desk machine.
      {"benchmark-digits-paper", {R"(
name = "benchmark-digits-paper"
desk_runnable = false
[data]
domains = ["plain", "inverted", "cluttered", "bold"]
shape = [3, 28, 28]
[partition]
kind = "domain"
clients = 40
[federation]
rounds = 150
start_round = 20
[ood]
pool_size = 500
)"}},
      {"benchmark-cifar10-paper", {R"(
name = "benchmark-cifar10-paper"
desk_runnable = false
[data]
source = "idx"
shape = [3, 32, 32]
[partition]
kind = "class"
clients = 100
classes_per_client = 3
[federation]
rounds = 300
start_round = 20
[ood]
source = "jigsaw"
)"}},
      {"benchmark-cifar100-paper", {R"(
name = "benchmark-cifar100-paper"
desk_runnable = false
[data]
source = "idx"
shape = [3, 32, 32]
[partition]
kind = "dirichlet"
clients = 100
alpha = 0.5
[federation]
rounds = 300
start_round = 40
[ood]
source = "jigsaw"
)"}},
  };
  return p;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, p] : presets()) out.push_back(name);
    return out;
  }();
  return names;
}

nlohmann::json preset_json(const std::string& name) {
  const auto it = presets().find(name);
  if (it == presets().end()) {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    fail("unknown-preset", "no preset '" + name + "' (known: " + known + ")");
  }
  nlohmann::json j = it->second.desk_base ? parse_toml(desk_base) : nlohmann::json::object();
  merge_json(j, parse_toml(it->second.overrides));
  return j;
}

}  // namespace duw

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "duw/model.hpp"
#include "duw/partition.hpp"

namespace duw {

struct RoundConfig {
  double active_fraction = 1.0;
  int local_steps = 50;  // T, mini-batch steps
  float local_lr = 0.01f;
  int batch_size = 32;
  bool injection_enabled = false;
  int injection_start_round = 0;
};

struct RoundRecord {
  int round = 0;
  double mean_acc = 0;  // theta_g over the client test sets
  double val_acc = 0;   // theta_g over the pooled validation split
  double mean_wsr = 0;
  double tacc = 0;
  double wall_clock = 0;  // seconds since the federation started
};

struct FederationState {
  Model global;  // theta_g: feature extractor, running statistics and classifier; never carries a decoder
  int round = 0;
  std::vector<ClientDataset> clients;
  ImageSet validation;
  std::map<int, Model> delivered;  // what the server sent to k in the latest round
  std::map<int, Model> leaked;     // k's model after local training in the latest round
  std::vector<RoundRecord> history;
  std::uint64_t seed = 0;
  double elapsed = 0;
};

FederationState make_federation(const Architecture& arch, std::vector<ClientDataset> clients, ImageSet validation,
                                std::uint64_t seed);

/// Server-side hooks. `global` runs once on theta_g before the client loop
/// (hybrid unified watermark), `client` turns theta_g into the model
/// delivered to client k, `metrics` fills the WSR columns of the record.
struct RoundHooks {
  std::function<Model(const Model& theta_g, int round)> global;
  std::function<Model(const Model& theta_g, int client_id, int round)> client;
  std::function<void(const FederationState& state, RoundRecord& record)> metrics;
};

/// ceil(fraction * K) distinct ids in ascending order, uniform without replacement.
std::vector<int> sample_active(int num_clients, double active_fraction, int round, std::uint64_t seed);

/// T cross-entropy SGD steps on theta_f and theta_h over the client's
/// training data; batch-norm layers run in train mode.
Model local_train(Model model, const ClientDataset& client, int steps, float lr, int batch_size, std::uint64_t seed);

/// Elementwise mean; throws "incompatible-parameters" on mismatched collections.
ParamSet<float> aggregate(const std::vector<const ParamSet<float>*>& params);

/// FedAvg of feature extractors, running statistics and classifier heads.
Model aggregate_models(const std::vector<const Model*>& models);

/// One FedAvg round; the client loop and aggregation run in ascending id order.
void run_round(FederationState& state, const RoundConfig& config, const RoundHooks& hooks = {});

/// Mean over clients of theta's accuracy on each client's own test split.
double mean_client_accuracy(const Model& model, const std::vector<ClientDataset>& clients);

}  // namespace duw

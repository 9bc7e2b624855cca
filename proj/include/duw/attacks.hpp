#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "duw/data.hpp"
#include "duw/model.hpp"
#include "duw/partition.hpp"

// Attacks see only what a malicious client holds: its leaked (theta_f,
// theta_h) and its local data. Nothing here includes keys, triggers or the
// decoder.

namespace duw {

struct TrainSchedule {
  int epochs = 50;
  float lr = 1e-5f;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

/// 0/1 masks over the tensors of a parameter collection.
using Mask = ParamSet<float>;

/// Cross-entropy training of theta_f and theta_h on labeled images. With a
/// mask, masked-out positions are re-zeroed after every step.
Model train_epochs(Model model, const ImageSet& data, const TrainSchedule& schedule, const Mask* feature_mask = nullptr,
                   const Mask* head_mask = nullptr);

Model finetune_attack(const Model& leaked, const ClientDataset& client, const TrainSchedule& schedule);

struct PruneMasks {
  Mask feature;
  Mask classifier;
  Index pruned = 0;
  Index total = 0;
};

/// Global magnitude pruning over every weight tensor of theta_f and theta_h
/// (biases and normalization parameters are left alone). Exactly
/// floor(rate * n) weights are zeroed; ties resolve by position.
PruneMasks magnitude_prune(Model& model, double rate);

Model prune_attack(const Model& leaked, const ClientDataset& client, double rate, const TrainSchedule& schedule);

struct ExtractionConfig {
  TrainSchedule schedule{20, 0.01f, 32, 0};
  bool warm_start = false;  // re-train the victim itself instead of a fresh model
};

/// Labels `aux` with the victim's classifier and trains a surrogate on it.
Model extraction_attack(const Model& victim, const ImageSet& aux, const ExtractionConfig& config);

/// w <- w * (1 + alpha * N(0,1)) for every parameter of theta_f and theta_h.
Model perturb_attack(const Model& leaked, double alpha, std::uint64_t seed);

struct CleanseConfig {
  int steps = 300;
  int batch_size = 32;
  float lr = 0.1f;
  double lambda = 1e-2;
  double target_success = 0.95;
  int adjust_every = 10;
  std::uint64_t seed = 0;
};

struct CleanseResult {
  std::vector<double> mask_norms;  // minimal L1 mask norm per class
  std::vector<bool> converged;     // reached target_success for the class
  double anomaly_index = 0;
  int suspect_class = -1;
  bool flagged = false;  // anomaly index > 2
  bool low_confidence = false;
};

/// Median-absolute-deviation outlier score of the smallest norm below the
/// median (consistency constant 1.4826).
double mad_anomaly_index(const std::vector<double>& norms, int* suspect = nullptr);

/// Neural-Cleanse style trigger reverse engineering over the classifier's classes.
CleanseResult anomaly_index(const Model& model, const ImageSet& benign, const CleanseConfig& config);

}  // namespace duw

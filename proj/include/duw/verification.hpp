#pragma once

#include <optional>
#include <vector>

#include "json.hpp"

#include "duw/keying.hpp"
#include "duw/model.hpp"
#include "duw/partition.hpp"
#include "duw/trigger.hpp"

namespace duw {

inline constexpr double default_sigma = 0.5;

/// Fraction of trigger images whose argmax equals the trigger target. Decoder
/// space swaps the suspect's classifier for `decoder`; classifier space uses
/// the suspect's own head. Throws "architecture-mismatch" when the suspect's
/// latent dimension does not fit the decoder.
double wsr(const Model& suspect, const TriggerSet& trigger, const DecoderParams* decoder);

struct VerificationReport {
  std::vector<double> wsr;   // indexed like the trigger sets passed to track()
  std::vector<int> client_ids;
  int predicted_leaker = -1;
  double wsr_gap = 0;
  std::vector<int> over_threshold;
  bool collision = false;
  bool ownership_established = false;
};

/// Report from a WSR vector; ties go to the lowest index.
VerificationReport make_report(std::vector<double> wsr, std::vector<int> client_ids, double sigma = default_sigma);

VerificationReport track(const Model& suspect, const std::vector<TriggerSet>& triggers, const DecoderParams* decoder,
                         double sigma = default_sigma);

double tacc(const std::vector<VerificationReport>& reports, const std::vector<int>& ground_truth);

struct AccuracyMetrics {
  double acc = 0;
  double delta_acc = 0;
};

/// Acc = mean per-client test accuracy of `model`; delta against the paired
/// non-watermarked baseline Acc. Throws "no-baseline" when it is missing.
AccuracyMetrics accuracy_metrics(const Model& model, const std::vector<ClientDataset>& clients,
                                 std::optional<double> baseline_acc);

nlohmann::json to_json(const VerificationReport& r);

}  // namespace duw

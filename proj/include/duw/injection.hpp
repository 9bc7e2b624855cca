#pragma once

#include <vector>

#include "duw/keying.hpp"
#include "duw/model.hpp"
#include "duw/trigger.hpp"

namespace duw {

struct InjectionConfig {
  int steps = 10;  // T_w
  float lr = 0.005f;
  float beta = 0.1f;
  int batch_size = 512;  // full batch whenever the trigger set fits
};

struct InjectionResult {
  Model model;
  std::vector<double> loss_trace;  // J' before each step, then after the last one
};

/// J'(theta_f) = CE(head(f(x')), target) + beta/2 * ||theta_f - anchor||^2
/// over the whole trigger set. `head` must already be attached to the model.
double injection_objective(const Model& model, Head head, const ParamSet<float>& anchor, const TriggerSet& trigger,
                           float beta);

/// Server-side DUW injection into a copy of theta_g. Only theta_f moves; the
/// classifier and decoder are returned bit-identical and the classifier is
/// the active head again on return. Throws "injection-diverged".
InjectionResult inject_duw(const Model& theta_g, const TriggerSet& trigger, const DecoderParams& decoder,
                           const InjectionConfig& config);

/// Same optimization in classifier space (badnet baselines, decoder ablation):
/// cross-entropy of the classifier logits against trigger.target, theta_f only.
InjectionResult inject_classifier(const Model& theta_g, const TriggerSet& trigger, const InjectionConfig& config);

/// Fine-tunes theta_f and theta_h on the unified trigger set labeled
/// `target_class` (no decoder, no proximal term).
Model inject_unified(const Model& theta_g, const TriggerSet& unified, int target_class, int steps, float lr,
                     int batch_size = 512);

}  // namespace duw

#include "duw/verification.hpp"

#include "duw/fl.hpp"

namespace duw {

double wsr(const Model& suspect, const TriggerSet& trigger, const DecoderParams* decoder) {
  if (trigger.size() == 0) return 0.0;
  std::vector<int> pred;
  if (trigger.space == TargetSpace::decoder) {
    require(decoder != nullptr, "decoder-not-attached", "decoder-space trigger set needs the decoder");
    if (decoder->latent_dim() != suspect.latent_dim())
      fail("architecture-mismatch", "suspect latent dimension " + std::to_string(suspect.latent_dim()) +
                                        " does not match decoder input " + std::to_string(decoder->latent_dim()));
    // features once, decoder logits directly: the suspect stays untouched
    const RowMatrix<float> z = features(suspect, trigger.images.images);
    RowMatrix<float> logits = (decoder->weight * z).colwise() + decoder->bias;
    pred = argmax_rows(logits.transpose());
  } else {
    pred = predict(suspect, Head::classifier, trigger.images.images);
  }
  std::size_t hits = 0;
  for (int p : pred) hits += p == trigger.target;
  return double(hits) / double(pred.size());
}

VerificationReport make_report(std::vector<double> w, std::vector<int> ids, double sigma) {
  require(!w.empty() && w.size() == ids.size(), "invalid-argument", "need one WSR per client");
  VerificationReport r;
  r.wsr = std::move(w);
  r.client_ids = std::move(ids);
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.wsr.size(); ++i)
    if (r.wsr[i] > r.wsr[best]) best = i;
  r.predicted_leaker = r.client_ids[best];
  double second = 0;
  bool have_second = false;
  for (std::size_t i = 0; i < r.wsr.size(); ++i) {
    if (i == best) continue;
    if (!have_second || r.wsr[i] > second) second = r.wsr[i];
    have_second = true;
  }
  r.wsr_gap = have_second ? r.wsr[best] - second : r.wsr[best];
  for (std::size_t i = 0; i < r.wsr.size(); ++i)
    if (r.wsr[i] > sigma) r.over_threshold.push_back(r.client_ids[i]);
  r.collision = r.over_threshold.size() > 1;
  r.ownership_established = !r.over_threshold.empty();
  return r;
}

VerificationReport track(const Model& suspect, const std::vector<TriggerSet>& triggers, const DecoderParams* decoder,
                         double sigma) {
  require(!triggers.empty(), "invalid-argument", "no trigger sets to verify against");
  std::vector<double> w;
  std::vector<int> ids;
  for (const auto& t : triggers) {
    w.push_back(wsr(suspect, t, decoder));
    ids.push_back(t.client_id);
  }
  return make_report(std::move(w), std::move(ids), sigma);
}

double tacc(const std::vector<VerificationReport>& reports, const std::vector<int>& ground_truth) {
  require(reports.size() == ground_truth.size(), "invalid-argument", "reports and ground truth differ in length");
  if (reports.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) hits += reports[i].predicted_leaker == ground_truth[i];
  return double(hits) / double(reports.size());
}

AccuracyMetrics accuracy_metrics(const Model& model, const std::vector<ClientDataset>& clients,
                                 std::optional<double> baseline_acc) {
  if (!baseline_acc) fail("no-baseline", "Acc delta needs a paired non-watermarked run");
  AccuracyMetrics m;
  m.acc = mean_client_accuracy(model, clients);
  m.delta_acc = *baseline_acc - m.acc;
  return m;
}

nlohmann::json to_json(const VerificationReport& r) {
  return {{"wsr", r.wsr},
          {"client_ids", r.client_ids},
          {"predicted_leaker", r.predicted_leaker},
          {"wsr_gap", r.wsr_gap},
          {"over_threshold", r.over_threshold},
          {"collision", r.collision},
          {"ownership_established", r.ownership_established}};
}

}  // namespace duw

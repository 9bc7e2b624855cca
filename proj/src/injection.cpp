#include "duw/injection.hpp"

#include <cmath>
#include <numeric>

namespace duw {

namespace {

std::vector<int> batch_rows(int n, int batch_size, int step) {
  const int b = std::min(n, std::max(1, batch_size));
  std::vector<int> rows(static_cast<std::size_t>(b));
  const int start = static_cast<int>((static_cast<long long>(step) * b) % n);
  for (int i = 0; i < b; ++i) rows[static_cast<std::size_t>(i)] = (start + i) % n;
  return rows;
}

double cross_entropy(const Model& model, Head head, const TriggerSet& trigger) {
  RowMatrix<float> logits = forward(model, head, trigger.images.images).transpose();
  const std::vector<int> targets(static_cast<std::size_t>(trigger.size()), trigger.target);
  return softmax_cross_entropy(logits, targets);
}

InjectionResult inject_feature(const Model& theta_g, Head head, const TriggerSet& trigger,
                               const InjectionConfig& config) {
  require(config.steps >= 0, "invalid-argument", "injection steps must be >= 0");
  require(config.lr >= 0 && config.beta >= 0, "invalid-argument", "lr and beta must be non-negative");
  require(trigger.size() >= 1, "invalid-argument", "empty trigger set");
  const int outputs = head_outputs(theta_g, head);
  require(trigger.target >= 0 && trigger.target < outputs, "invalid-argument", "trigger target outside head range");

  InjectionResult result{theta_g, {}};
  Model& m = result.model;
  m.head = head;
  const ParamSet<float>& anchor = theta_g.feature;
  const int n = trigger.size();
  for (int step = 0; step < config.steps; ++step) {
    const auto rows = batch_rows(n, config.batch_size, step);
    const ImageSet batch = trigger.images.subset(rows);
    const std::vector<int> targets(rows.size(), trigger.target);
    // eval mode: injection must not touch running statistics
    auto g = cross_entropy_gradient(m, head, batch.images, targets, Mode::eval);
    const double prox = 0.5 * config.beta * squared_distance(m.feature, anchor);
    const double j = g.loss + prox;
    if (!std::isfinite(j)) fail("injection-diverged", "non-finite objective at step " + std::to_string(step));
    result.loss_trace.push_back(j);
    for (auto& [name, t] : g.feature) t.values += config.beta * (m.feature.at(name).values - anchor.at(name).values);
    try {
      m.feature = sgd_step(m.feature, g.feature, config.lr, "feature");
    } catch (const Error&) {
      fail("injection-diverged", "non-finite gradient at step " + std::to_string(step));
    }
  }
  const double final_j = injection_objective(m, head, anchor, trigger, config.beta);
  if (!std::isfinite(final_j)) fail("injection-diverged", "non-finite objective after step " + std::to_string(config.steps));
  result.loss_trace.push_back(final_j);
  m.head = Head::classifier;
  return result;
}

}  // namespace

double injection_objective(const Model& model, Head head, const ParamSet<float>& anchor, const TriggerSet& trigger,
                           float beta) {
  const double ce = cross_entropy(model, head, trigger);
  if (beta == 0) return ce;
  return ce + 0.5 * beta * double(squared_distance(model.feature, anchor));
}

InjectionResult inject_duw(const Model& theta_g, const TriggerSet& trigger, const DecoderParams& decoder,
                           const InjectionConfig& config) {
  require(decoder.frozen, "invalid-argument", "decoder must be frozen");
  require(trigger.space == TargetSpace::decoder, "invalid-argument", "DUW injection needs a decoder-space trigger set");
  require(trigger.target < decoder.key_length(), "key-encoder-mismatch", "trigger key longer than decoder output");
  const Model with_decoder = attach_decoder(theta_g, decoder);
  InjectionResult r = inject_feature(with_decoder, Head::decoder, trigger, config);
  // the server keeps theta_D; delivered models carry only f and h
  r.model.decoder.reset();
  return r;
}

InjectionResult inject_classifier(const Model& theta_g, const TriggerSet& trigger, const InjectionConfig& config) {
  require(trigger.space == TargetSpace::classifier, "invalid-argument",
          "classifier injection needs a classifier-space trigger set");
  return inject_feature(theta_g, Head::classifier, trigger, config);
}

Model inject_unified(const Model& theta_g, const TriggerSet& unified, int target_class, int steps, float lr,
                     int batch_size) {
  require(target_class >= 0 && target_class < theta_g.arch.num_classes, "invalid-argument",
          "unified target class outside [0, C)");
  require(steps >= 0 && lr >= 0, "invalid-argument", "steps and lr must be non-negative");
  Model m = theta_g;
  m.head = Head::classifier;
  for (int step = 0; step < steps; ++step) {
    const auto rows = batch_rows(unified.size(), batch_size, step);
    const ImageSet batch = unified.images.subset(rows);
    const std::vector<int> targets(rows.size(), target_class);
    auto g = cross_entropy_gradient(m, Head::classifier, batch.images, targets, Mode::eval);
    if (!std::isfinite(g.loss)) fail("injection-diverged", "unified watermark diverged at step " + std::to_string(step));
    try {
      m.feature = sgd_step(m.feature, g.feature, lr, "feature");
      m.classifier = sgd_step(m.classifier, g.head, lr, "classifier");
    } catch (const Error&) {
      fail("injection-diverged", "unified watermark gradient non-finite at step " + std::to_string(step));
    }
  }
  return m;
}

}  // namespace duw

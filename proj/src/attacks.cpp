#include "duw/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "duw/optim.hpp"

namespace duw {

namespace {

void apply_mask(ParamSet<float>& params, const Mask& mask) {
  for (const auto& [name, m] : mask) params.at(name).values.array() *= m.values.array();
}

}  // namespace

Model train_epochs(Model model, const ImageSet& data, const TrainSchedule& s, const Mask* feature_mask,
                   const Mask* head_mask) {
  require(s.epochs >= 0 && s.lr >= 0, "invalid-argument", "epochs and lr must be non-negative");
  if (s.epochs == 0) return model;
  require(data.size() >= 1 && data.labeled(), "insufficient-data", "training needs labeled images");
  model.head = Head::classifier;
  Rng rng = make_rng(s.seed, {stream::attack, 0});
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  const std::size_t b = static_cast<std::size_t>(std::max(1, s.batch_size));
  for (int epoch = 0; epoch < s.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += b) {
      const std::vector<int> rows(order.begin() + start, order.begin() + std::min(order.size(), start + b));
      const ImageSet batch = data.subset(rows);
      auto g = cross_entropy_gradient(model, Head::classifier, batch.images, batch.labels, Mode::train);
      if (!std::isfinite(g.loss)) fail("numerical-divergence", "attack training diverged in epoch " + std::to_string(epoch));
      model.feature = sgd_step(model.feature, g.feature, s.lr, "feature");
      model.classifier = sgd_step(model.classifier, g.head, s.lr, "classifier");
      model.feature_state = std::move(g.state);
      if (feature_mask) apply_mask(model.feature, *feature_mask);
      if (head_mask) apply_mask(model.classifier, *head_mask);
    }
  }
  return model;
}

Model finetune_attack(const Model& leaked, const ClientDataset& client, const TrainSchedule& schedule) {
  Model m = leaked;
  m.decoder.reset();
  return train_epochs(std::move(m), client.train, schedule);
}

PruneMasks magnitude_prune(Model& model, double rate) {
  if (!(rate >= 0 && rate < 1)) fail("invalid-argument", "prune rate must lie in [0, 1)");
  struct Slot {
    ParamSet<float>* params;
    std::string name;
  };
  std::vector<Slot> slots;
  auto collect = [&](ParamSet<float>& p) {
    for (auto& [name, t] : p)
      if (name.size() >= 6 && name.compare(name.size() - 6, 6, "weight") == 0) slots.push_back({&p, name});
  };
  collect(model.feature);
  collect(model.classifier);

  std::vector<std::pair<std::size_t, Index>> where;  // (slot, offset)
  std::vector<float> magnitude;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto& v = slots[s].params->at(slots[s].name).values;
    for (Index i = 0; i < v.size(); ++i) {
      where.emplace_back(s, i);
      magnitude.push_back(std::abs(v[i]));
    }
  }
  PruneMasks masks;
  masks.feature = zeros_like(model.feature);
  masks.classifier = zeros_like(model.classifier);
  for (auto* m : {&masks.feature, &masks.classifier})
    for (auto& [name, t] : *m) t.values.setOnes();

  masks.total = static_cast<Index>(magnitude.size());
  const auto k = static_cast<std::size_t>(std::floor(rate * double(magnitude.size())));
  std::vector<std::size_t> idx(magnitude.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    return magnitude[a] < magnitude[b] || (magnitude[a] == magnitude[b] && a < b);
  });
  for (std::size_t j = 0; j < k; ++j) {
    const auto [s, i] = where[idx[j]];
    slots[s].params->at(slots[s].name).values[i] = 0.f;
    Mask& mask = slots[s].params == &model.feature ? masks.feature : masks.classifier;
    mask.at(slots[s].name).values[i] = 0.f;
  }
  masks.pruned = static_cast<Index>(k);
  return masks;
}

Model prune_attack(const Model& leaked, const ClientDataset& client, double rate, const TrainSchedule& schedule) {
  Model m = leaked;
  m.decoder.reset();
  const PruneMasks masks = magnitude_prune(m, rate);
  return train_epochs(std::move(m), client.train, schedule, &masks.feature, &masks.classifier);
}

Model extraction_attack(const Model& victim, const ImageSet& aux, const ExtractionConfig& config) {
  require(aux.size() >= 1, "insufficient-data", "extraction needs a non-empty auxiliary pool");
  require(aux.shape == victim.arch.input, "input-shape", "auxiliary pool must match the victim input shape");
  ImageSet labeled = aux;
  labeled.labels = predict(victim, Head::classifier, aux.images);
  Model stolen;
  if (config.warm_start) {
    stolen = victim;
    stolen.decoder.reset();
  } else {
    stolen = make_model<float>(victim.arch, derive_seed(config.schedule.seed, {stream::attack, 1}));
  }
  return train_epochs(std::move(stolen), labeled, config.schedule);
}

Model perturb_attack(const Model& leaked, double alpha, std::uint64_t seed) {
  require(alpha >= 0, "invalid-argument", "noise scale must be non-negative");
  Model m = leaked;
  m.decoder.reset();
  Rng rng = make_rng(seed, {stream::attack, 2});
  std::normal_distribution<double> n01(0.0, 1.0);
  for (auto* p : {&m.feature, &m.classifier})
    for (auto& [name, t] : *p)
      for (Index i = 0; i < t.size(); ++i) t.values[i] = static_cast<float>(t.values[i] * (1.0 + alpha * n01(rng)));
  return m;
}

double mad_anomaly_index(const std::vector<double>& norms, int* suspect) {
  require(!norms.empty(), "invalid-argument", "no mask norms");
  auto median = [](std::vector<double> v) {
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  const double med = median(norms);
  std::vector<double> dev;
  for (double x : norms) dev.push_back(std::abs(x - med));
  const double mad = 1.4826 * median(dev);
  double best = 0;
  int who = -1;
  for (std::size_t c = 0; c < norms.size(); ++c) {
    if (norms[c] >= med) continue;
    const double score = mad > 0 ? (med - norms[c]) / mad : std::numeric_limits<double>::infinity();
    if (who < 0 || score > best) {
      best = score;
      who = static_cast<int>(c);
    }
  }
  if (suspect) *suspect = who;
  return best;
}

CleanseResult anomaly_index(const Model& model, const ImageSet& benign, const CleanseConfig& cfg) {
  require(benign.size() >= 1, "insufficient-data", "need benign images");
  const ImageShape& s = model.arch.input;
  require(benign.shape == s, "input-shape", "benign images do not match the model input");
  const int C = model.arch.num_classes;
  const int plane = s.plane();
  Model m = model;
  m.head = Head::classifier;
  CleanseResult result;
  result.mask_norms.assign(static_cast<std::size_t>(C), 0.0);
  result.converged.assign(static_cast<std::size_t>(C), false);

  auto sigmoid = [](const auto& a) { return (1.f + (-a.array()).exp()).inverse().matrix().eval(); };

  for (int c = 0; c < C; ++c) {
    Rng rng = make_rng(cfg.seed, {stream::attack, 3, static_cast<std::uint64_t>(c)});
    std::normal_distribution<float> g(0.f, 0.1f);
    ParamSet<float> vars;
    vars["mask"] = Tensor<float>({plane});
    vars["pattern"] = Tensor<float>({s.size()});
    for (auto& [n, t] : vars)
      for (Index i = 0; i < t.size(); ++i) t.values[i] = g(rng);
    vars["mask"].values.array() -= 2.f;  // start from a small mask
    Adam<float> opt(cfg.lr, 0.5f, 0.9f);
    double lambda = cfg.lambda;
    double best = std::numeric_limits<double>::infinity();
    double last_norm = 0;
    int hits = 0, seen = 0;
    std::uniform_int_distribution<int> pick(0, benign.size() - 1);
    const int b = std::min(cfg.batch_size, benign.size());
    const std::vector<int> targets(static_cast<std::size_t>(b), c);

    for (int step = 0; step < cfg.steps; ++step) {
      std::vector<int> rows(static_cast<std::size_t>(b));
      for (auto& r : rows) r = pick(rng);
      const RowMatrix<float> x = benign.subset(rows).images;
      const Vector<float> mask = sigmoid(vars["mask"].values);
      const Vector<float> pattern = sigmoid(vars["pattern"].values);
      RowMatrix<float> xs(b, s.size());
      for (int ch = 0; ch < s.channels; ++ch) {
        auto block = x.middleCols(Index{ch} * plane, plane);
        const auto pat = pattern.segment(Index{ch} * plane, plane).transpose();
        xs.middleCols(Index{ch} * plane, plane) =
            (block.array().rowwise() * (1.f - mask.transpose().array())).matrix() +
            (mask.cwiseProduct(pat.transpose())).transpose().replicate(b, 1);
      }
      auto grad = cross_entropy_gradient(m, Head::classifier, xs, targets, Mode::eval, true);
      const auto pred = argmax_rows(grad.logits);
      int ok = 0;
      for (int p : pred) ok += p == c;
      hits += ok;
      seen += b;

      // chain rule through x' = (1 - m) x + m p and the sigmoids
      Vector<float> dmask = Vector<float>::Zero(plane);
      Vector<float> dpattern(s.size());
      for (int ch = 0; ch < s.channels; ++ch) {
        const auto dx = grad.input.middleCols(Index{ch} * plane, plane);
        const auto pat = pattern.segment(Index{ch} * plane, plane);
        const RowMatrix<float> diff = (-x.middleCols(Index{ch} * plane, plane)).rowwise() + pat.transpose();
        dmask += dx.cwiseProduct(diff).colwise().sum().transpose();
        dpattern.segment(Index{ch} * plane, plane) = dx.colwise().sum().transpose().cwiseProduct(mask);
      }
      dmask.array() += float(lambda);
      ParamSet<float> grads;
      grads["mask"] = Tensor<float>({plane});
      grads["pattern"] = Tensor<float>({s.size()});
      grads["mask"].values = dmask.cwiseProduct(mask.cwiseProduct((1.f - mask.array()).matrix()));
      grads["pattern"].values = dpattern.cwiseProduct(pattern.cwiseProduct((1.f - pattern.array()).matrix()));
      opt.step(vars, grads);

      last_norm = mask.sum();
      if (double(ok) / b >= cfg.target_success) {
        result.converged[static_cast<std::size_t>(c)] = true;
        best = std::min(best, double(last_norm));
      }
      if ((step + 1) % cfg.adjust_every == 0) {
        lambda *= double(hits) / seen >= cfg.target_success ? 1.5 : 1.0 / 1.5;
        hits = seen = 0;
      }
    }
    result.mask_norms[static_cast<std::size_t>(c)] = std::isfinite(best) ? best : last_norm;
    if (!result.converged[static_cast<std::size_t>(c)]) result.low_confidence = true;
  }
  result.anomaly_index = mad_anomaly_index(result.mask_norms, &result.suspect_class);
  result.flagged = result.anomaly_index > 2.0;
  return result;
}

}  // namespace duw

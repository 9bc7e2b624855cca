#include "duw/fl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace duw {

FederationState make_federation(const Architecture& arch, std::vector<ClientDataset> clients, ImageSet validation,
                                std::uint64_t seed) {
  require(!clients.empty(), "invalid-argument", "federation needs at least one client");
  FederationState s;
  s.global = make_model<float>(arch, derive_seed(seed, {stream::model_init}));
  s.clients = std::move(clients);
  s.validation = std::move(validation);
  s.seed = seed;
  return s;
}

std::vector<int> sample_active(int num_clients, double active_fraction, int round, std::uint64_t seed) {
  require(num_clients >= 1, "invalid-argument", "need at least one client");
  if (!(active_fraction > 0 && active_fraction <= 1))
    fail("invalid-argument", "active fraction must lie in (0, 1]");
  const int m = std::min(num_clients, static_cast<int>(std::ceil(active_fraction * num_clients - 1e-9)));
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  if (m < num_clients) {
    Rng rng = make_rng(seed, {stream::sampling, static_cast<std::uint64_t>(round)});
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<std::size_t>(m));
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

Model local_train(Model model, const ClientDataset& client, int steps, float lr, int batch_size, std::uint64_t seed) {
  require(steps >= 1, "invalid-argument", "local steps must be >= 1");
  require(client.train.size() >= 1 && client.train.labeled(), "insufficient-data",
          "client " + std::to_string(client.client_id) + " has no labeled training data");
  model.head = Head::classifier;
  Rng rng(seed);
  const int n = client.train.size();
  const int b = std::min(batch_size, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<int> rows(static_cast<std::size_t>(b));
  for (int step = 0; step < steps; ++step) {
    for (auto& r : rows) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      r = order[cursor++];
    }
    const ImageSet batch = client.train.subset(rows);
    auto g = cross_entropy_gradient(model, Head::classifier, batch.images, batch.labels, Mode::train);
    try {
      if (!std::isfinite(g.loss)) fail("numerical-divergence", "non-finite loss");
      model.feature = sgd_step(model.feature, g.feature, lr, "feature");
      model.classifier = sgd_step(model.classifier, g.head, lr, "classifier");
    } catch (const Error& e) {
      fail(e.code(), "client " + std::to_string(client.client_id) + " step " + std::to_string(step) + ": " + e.what());
    }
    model.feature_state = std::move(g.state);
  }
  return model;
}

ParamSet<float> aggregate(const std::vector<const ParamSet<float>*>& params) {
  require(!params.empty(), "invalid-argument", "nothing to aggregate");
  for (std::size_t i = 1; i < params.size(); ++i) check_compatible(*params[0], *params[i]);
  ParamSet<float> out = zeros_like(*params[0]);
  const double inv = 1.0 / double(params.size());
  for (auto& [name, t] : out) {
    Vector<double> acc = Vector<double>::Zero(t.size());
    for (const auto* p : params) acc += p->at(name).values.cast<double>();
    t.values = (acc * inv).cast<float>();
  }
  return out;
}

Model aggregate_models(const std::vector<const Model*>& models) {
  require(!models.empty(), "invalid-argument", "nothing to aggregate");
  std::vector<const ParamSet<float>*> f, s, h;
  for (const auto* m : models) {
    require(m->arch == models[0]->arch, "incompatible-parameters", "models have different architectures");
    f.push_back(&m->feature);
    s.push_back(&m->feature_state);
    h.push_back(&m->classifier);
  }
  Model out;
  out.arch = models[0]->arch;
  out.seed = models[0]->seed;
  out.feature = aggregate(f);
  out.feature_state = aggregate(s);
  out.classifier = aggregate(h);
  return out;
}

void run_round(FederationState& state, const RoundConfig& config, const RoundHooks& hooks) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const int K = static_cast<int>(state.clients.size());
  const int round = state.round;
  const auto active = sample_active(K, config.active_fraction, round, state.seed);
  const bool inject = config.injection_enabled && round >= config.injection_start_round && hooks.client;

  Model theta_g = state.global;
  if (inject && hooks.global) theta_g = hooks.global(theta_g, round);

  state.delivered.clear();
  state.leaked.clear();
  for (int k : active) {
    Model theta_k = inject ? hooks.client(theta_g, k, round) : theta_g;
    theta_k.decoder.reset();
    theta_k.head = Head::classifier;
    state.delivered.emplace(k, theta_k);
    const auto seed = derive_seed(state.seed, {stream::local_train, static_cast<std::uint64_t>(round),
                                               static_cast<std::uint64_t>(k)});
    state.leaked.emplace(k, local_train(std::move(theta_k), state.clients[static_cast<std::size_t>(k)],
                                        config.local_steps, config.local_lr, config.batch_size, seed));
  }

  std::vector<const Model*> trained;
  for (const auto& [k, m] : state.leaked) trained.push_back(&m);
  state.global = aggregate_models(trained);
  if (!all_finite(state.global.feature) || !all_finite(state.global.classifier))
    fail("numerical-divergence", "global model not finite after round " + std::to_string(round));
  ++state.round;

  state.elapsed += std::chrono::duration<double>(clock::now() - start).count();
  RoundRecord rec;
  rec.round = state.round;
  rec.mean_acc = mean_client_accuracy(state.global, state.clients);
  if (state.validation.size() > 0)
    rec.val_acc = accuracy(state.global, Head::classifier, state.validation.images, state.validation.labels);
  if (hooks.metrics) hooks.metrics(state, rec);
  rec.wall_clock = state.elapsed;
  state.history.push_back(rec);
}

double mean_client_accuracy(const Model& model, const std::vector<ClientDataset>& clients) {
  double total = 0;
  int counted = 0;
  for (const auto& c : clients) {
    if (c.test.size() == 0) continue;
    total += accuracy(model, Head::classifier, c.test.images, c.test.labels);
    ++counted;
  }
  return counted ? total / counted : 0.0;
}

}  // namespace duw

#include "doctest.h"

#include <algorithm>
#include <set>

#include "duw/fl.hpp"

#include "helpers.hpp"

using namespace duw;

namespace {

const ImageShape kTiny{1, 4, 4};

std::vector<ClientDataset> tiny_clients(int k, int n, std::uint64_t seed) {
  std::vector<ClientDataset> out;
  for (int i = 0; i < k; ++i) {
    ImageSet train = test::random_images(n, kTiny, seed + i, 3);
    ImageSet testset = test::random_images(9, kTiny, seed + 100 + i, 3);
    out.push_back(test::make_client(i, train, testset));
  }
  return out;
}

// Softmax regression SGD in double with the same sampling order as the client loop.
Matrix<double> reference_local_train(Matrix<double> wb, const ClientDataset& c, int steps, double lr, int batch,
                                     std::uint64_t seed) {
  const int n = c.train.size();
  const int b = std::min(batch, n);
  Rng rng(seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const Index p = kTiny.size();
  for (int s = 0; s < steps; ++s) {
    Matrix<double> grad = Matrix<double>::Zero(wb.rows(), wb.cols());
    for (int j = 0; j < b; ++j) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const int r = order[cursor++];
      Vector<double> x(p + 1);
      for (Index i = 0; i < p; ++i) x(i) = c.train.images(r, i);
      x(p) = 1;
      Vector<double> z = wb * x;
      z.array() -= z.maxCoeff();
      Vector<double> prob = z.array().exp();
      prob /= prob.sum();
      prob(c.train.labels[static_cast<std::size_t>(r)]) -= 1;
      grad += prob * x.transpose() / double(b);
    }
    wb -= lr * grad;
  }
  return wb;
}

Matrix<double> packed_head(const Model& m) {
  const auto& w = m.classifier.at("weight");
  Matrix<double> wb(w.rows(), w.cols() + 1);
  wb.leftCols(w.cols()) = w.matrix().cast<double>();
  wb.col(w.cols()) = m.classifier.at("bias").values.cast<double>();
  return wb;
}

}  // namespace

TEST_CASE("aggregate equals a flat-loop mean") {
  Rng rng = make_rng(1);
  std::normal_distribution<float> g;
  std::vector<ParamSet<float>> sets(5);
  for (auto& s : sets) {
    s["a"] = Tensor<float>({3, 4});
    s["b"] = Tensor<float>({7});
    for (auto& [name, t] : s)
      for (Index i = 0; i < t.size(); ++i) t.values[i] = g(rng);
  }
  std::vector<const ParamSet<float>*> ptrs;
  for (const auto& s : sets) ptrs.push_back(&s);
  const auto mean = aggregate(ptrs);
  for (const auto& [name, t] : mean)
    for (Index i = 0; i < t.size(); ++i) {
      double sum = 0;
      for (const auto& s : sets) sum += s.at(name).values[i];
      CHECK(std::abs(t.values[i] - sum / 5) <= 1e-7);
    }
  ParamSet<float> odd = sets[0];
  odd["b"] = Tensor<float>({6});
  ptrs.push_back(&odd);
  CHECK_ERROR_CODE(aggregate(ptrs), "incompatible-parameters");
}

TEST_CASE("active client sampling") {
  const auto all = sample_active(10, 1.0, 0, 1);
  CHECK(all.size() == 10);
  const auto some = sample_active(10, 0.3, 2, 1);
  CHECK(some.size() == 3);
  CHECK(std::is_sorted(some.begin(), some.end()));
  CHECK(std::set<int>(some.begin(), some.end()).size() == 3);
  CHECK(sample_active(10, 0.3, 2, 1) == some);
  CHECK(sample_active(7, 0.5, 0, 1).size() == 4);
  // different rounds draw different subsets at least sometimes
  bool varies = false;
  for (int r = 0; r < 10; ++r) varies |= sample_active(10, 0.3, r, 1) != some;
  CHECK(varies);
  CHECK_ERROR_CODE(sample_active(10, 0.0, 0, 1), "invalid-argument");
}

TEST_CASE("local training matches softmax-regression SGD") {
  const auto clients = tiny_clients(1, 20, 3);
  const Model m = make_model<float>(identity_features(kTiny, 3), 2);
  const Model trained = local_train(m, clients[0], 13, 0.2f, 8, 99);
  const Matrix<double> ref = reference_local_train(packed_head(m), clients[0], 13, 0.2, 8, 99);
  CHECK((packed_head(trained) - ref).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("a round is FedAvg over locally trained copies") {
  const auto clients = tiny_clients(4, 15, 7);
  FederationState state = make_federation(identity_features(kTiny, 3), clients, {}, 21);
  RoundConfig cfg;
  cfg.local_steps = 5;
  cfg.local_lr = 0.1f;
  cfg.batch_size = 4;
  cfg.active_fraction = 0.5;
  const Model start = state.global;
  run_round(state, cfg);

  const auto active = sample_active(4, 0.5, 0, 21);
  REQUIRE(state.leaked.size() == active.size());
  Matrix<double> mean = Matrix<double>::Zero(3, kTiny.size() + 1);
  for (int k : active) {
    const auto seed = derive_seed(21, {stream::local_train, 0, static_cast<std::uint64_t>(k)});
    mean += reference_local_train(packed_head(start), clients[static_cast<std::size_t>(k)], 5, 0.1, 4, seed);
    CHECK(checksum(state.delivered.at(k).classifier) == checksum(start.classifier));
  }
  mean /= double(active.size());
  CHECK((packed_head(state.global) - mean).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(state.round == 1);
  REQUIRE(state.history.size() == 1);
  CHECK(state.history[0].mean_acc == doctest::Approx(mean_client_accuracy(state.global, clients)));
}

TEST_CASE("aggregation of the stored client models is exact") {
  const auto clients = tiny_clients(3, 12, 9);
  FederationState state = make_federation(small_cnn(kTiny, 6, 3, true, 2, 2), clients, {}, 5);
  RoundConfig cfg;
  cfg.local_steps = 3;
  cfg.batch_size = 4;
  run_round(state, cfg);
  // independent mean over the leaked models, accumulated in double in id order
  for (const auto& [name, t] : state.global.feature)
    for (Index i = 0; i < t.size(); ++i) {
      double sum = 0;
      for (const auto& [k, m] : state.leaked) sum += m.feature.at(name).values[i];
      CHECK(t.values[i] == static_cast<float>(sum * (1.0 / 3.0)));
    }
  for (const auto& [name, t] : state.global.feature_state)
    for (Index i = 0; i < t.size(); ++i) {
      double sum = 0;
      for (const auto& [k, m] : state.leaked) sum += m.feature_state.at(name).values[i];
      CHECK(t.values[i] == static_cast<float>(sum * (1.0 / 3.0)));
    }
}

TEST_CASE("federation is deterministic in its seed") {
  const auto clients = tiny_clients(3, 12, 11);
  RoundConfig cfg;
  cfg.local_steps = 4;
  cfg.batch_size = 5;
  auto train = [&](std::uint64_t seed) {
    FederationState s = make_federation(small_cnn(kTiny, 6, 3, false, 2, 2), clients, {}, seed);
    for (int r = 0; r < 3; ++r) run_round(s, cfg);
    return checksum(s.global.feature) ^ checksum(s.global.classifier);
  };
  CHECK(train(1) == train(1));
  CHECK(train(1) != train(2));
}

TEST_CASE("hooks shape the delivered models") {
  const auto clients = tiny_clients(2, 10, 13);
  FederationState state = make_federation(identity_features(kTiny, 3), clients, {}, 3);
  RoundConfig cfg;
  cfg.local_steps = 1;
  cfg.injection_enabled = true;
  cfg.injection_start_round = 1;
  int calls = 0;
  RoundHooks hooks;
  hooks.client = [&](const Model& g, int k, int) {
    ++calls;
    Model m = g;
    m.classifier.at("bias").values.setConstant(float(k));
    return m;
  };
  run_round(state, cfg, hooks);
  CHECK(calls == 0);
  run_round(state, cfg, hooks);
  CHECK(calls == 2);
  CHECK(state.delivered.at(1).classifier.at("bias").values(0) == 1.f);
  CHECK(!state.delivered.at(1).decoder.has_value());
}

TEST_CASE("every client is selected with the expected frequency") {
  const int draws = 10000, k = 10;
  const double q = 0.3;
  std::vector<int> hits(k, 0);
  for (int r = 0; r < draws; ++r)
    for (int id : sample_active(k, q, r, 17)) ++hits[static_cast<std::size_t>(id)];
  const double sd = std::sqrt(draws * q * (1 - q));
  for (int h : hits) CHECK(std::abs(h - draws * q) <= 3 * sd);
}

TEST_CASE("local training at zero learning rate changes nothing") {
  const auto clients = tiny_clients(1, 10, 3);
  const Model m = make_model<float>(small_cnn(kTiny, 6, 3, false, 2, 2), 4);
  const Model out = local_train(m, clients[0], 5, 0.f, 4, 1);
  CHECK(checksum(out.feature) == checksum(m.feature));
  CHECK(checksum(out.classifier) == checksum(m.classifier));
}

TEST_CASE("local training fits a separable pair") {
  ImageSet train;
  train.shape = kTiny;
  train.images = RowMatrix<float>::Zero(2, kTiny.size());
  train.images.row(0).setOnes();
  train.labels = {0, 1};
  train.ids = {0, 1};
  const ClientDataset c = test::make_client(0, train, train);
  const Model m = local_train(make_model<float>(identity_features(kTiny, 2), 2), c, 200, 0.5f, 2, 3);
  CHECK(cross_entropy_gradient(m, Head::classifier, train.images, train.labels, Mode::eval).loss < 0.1f);
}

TEST_CASE("local training never touches an attached decoder") {
  const auto clients = tiny_clients(1, 10, 5);
  Model m = make_model<float>(small_cnn(kTiny, 4, 3, false, 2, 2), 6);
  m.decoder = make_model<float>(small_cnn(kTiny, 4, 3, false, 2, 2), 7).classifier;
  const auto before = checksum(*m.decoder);
  CHECK(checksum(*local_train(m, clients[0], 5, 0.1f, 4, 2).decoder) == before);
}

TEST_CASE("aggregation of trivial collections") {
  ParamSet<float> a, b;
  a["w"] = Tensor<float>({3});
  b["w"] = Tensor<float>({3});
  b["w"].values.setOnes();
  CHECK(aggregate({&b})["w"].values == b["w"].values);
  CHECK((aggregate({&a, &b})["w"].values.array() == 0.5f).all());
}

TEST_CASE("a lone client without injection becomes the global model") {
  const auto clients = tiny_clients(1, 12, 19);
  FederationState state = make_federation(small_cnn(kTiny, 6, 3, false, 2, 2), clients, {}, 8);
  RoundConfig cfg;
  cfg.local_steps = 4;
  cfg.batch_size = 4;
  const Model start = state.global;
  run_round(state, cfg);
  const Model local =
      local_train(start, clients[0], 4, cfg.local_lr, 4, derive_seed(8, {stream::local_train, 0, 0}));
  CHECK(checksum(state.global.feature) == checksum(local.feature));
  CHECK(checksum(state.global.classifier) == checksum(local.classifier));
}

TEST_CASE("injection changes the delivered extractor but not the classifier") {
  const auto clients = tiny_clients(2, 10, 23);
  FederationState state = make_federation(small_cnn(kTiny, 6, 3, false, 2, 2), clients, {}, 4);
  RoundConfig cfg;
  cfg.local_steps = 1;
  cfg.injection_enabled = true;
  RoundHooks hooks;
  hooks.client = [](const Model& g, int k, int) {
    Model m = g;
    m.feature.begin()->second.values.array() += 0.01f * float(k + 1);
    return m;
  };
  const Model start = state.global;
  run_round(state, cfg, hooks);
  for (int k = 0; k < 2; ++k) {
    CHECK(checksum(state.delivered.at(k).feature) != checksum(start.feature));
    CHECK(checksum(state.delivered.at(k).classifier) == checksum(start.classifier));
  }
}

#include "doctest.h"

#include "duw/keying.hpp"
#include "duw/verification.hpp"

#include "helpers.hpp"

using namespace duw;

TEST_CASE("report picks the maximum and breaks ties low") {
  const auto r = make_report({0.1, 0.9, 0.3, 0.9}, {4, 5, 6, 7}, 0.5);
  CHECK(r.predicted_leaker == 5);
  CHECK(r.wsr_gap == doctest::Approx(0.0));
  CHECK(r.over_threshold == std::vector<int>{5, 7});
  CHECK(r.collision);
  CHECK(r.ownership_established);

  const auto clean = make_report({0.02, 0.97, 0.0}, {0, 1, 2}, 0.5);
  CHECK(clean.predicted_leaker == 1);
  CHECK(clean.wsr_gap == doctest::Approx(0.95));
  CHECK(!clean.collision);
  CHECK(clean.over_threshold == std::vector<int>{1});

  // threshold is strict
  const auto edge = make_report({0.5, 0.2}, {0, 1}, 0.5);
  CHECK(edge.over_threshold.empty());
  CHECK(!edge.ownership_established);
  CHECK(make_report({0.7}, {3}).wsr_gap == doctest::Approx(0.7));
  CHECK_ERROR_CODE(make_report({0.1, 0.2}, {1}), "invalid-argument");
}

TEST_CASE("tracing accuracy") {
  const std::vector<VerificationReport> reps{make_report({0.9, 0.1}, {0, 1}), make_report({0.9, 0.1}, {0, 1}),
                                             make_report({0.1, 0.9}, {0, 1})};
  CHECK(tacc(reps, {0, 1, 1}) == doctest::Approx(2.0 / 3.0));
  CHECK_ERROR_CODE(tacc(reps, {0}), "invalid-argument");
}

TEST_CASE("decoder-space WSR is invariant to positive rescaling of the decoder") {
  const ImageShape shape{1, 8, 8};
  const Model m = make_model<float>(small_cnn(shape, 16, 4), 2);
  const DecoderParams dec = init_decoder(4, 16, 3);
  DecoderParams scaled = dec;
  scaled.weight *= 7.5f;
  TriggerSet t;
  t.images = test::random_images(30, shape, 4);
  t.space = TargetSpace::decoder;
  for (int target = 0; target < 4; ++target) {
    t.target = target;
    CHECK(wsr(m, t, &dec) == wsr(m, t, &scaled));
  }
  // the WSRs over all targets of one decoder sum to one
  double total = 0;
  for (int target = 0; target < 4; ++target) {
    t.target = target;
    total += wsr(m, t, &dec);
  }
  CHECK(total == doctest::Approx(1.0));
  CHECK_ERROR_CODE(wsr(m, t, nullptr), "decoder-not-attached");
  const DecoderParams wide = init_decoder(4, 32, 3);
  CHECK_ERROR_CODE(wsr(m, t, &wide), "architecture-mismatch");
}

TEST_CASE("accuracy metrics need a baseline") {
  const ImageShape shape{1, 4, 4};
  const Model m = make_model<float>(identity_features(shape, 3), 1);
  std::vector<ClientDataset> clients{test::make_client(0, test::random_images(5, shape, 1, 3), test::random_images(6, shape, 2, 3))};
  CHECK_ERROR_CODE(accuracy_metrics(m, clients, std::nullopt), "no-baseline");
  const auto a = accuracy_metrics(m, clients, 0.9);
  CHECK(a.delta_acc == doctest::Approx(0.9 - a.acc));
}

TEST_CASE("a constant decoder wins every trigger") {
  const ImageShape shape{1, 2, 2};
  const Model m = make_model<float>(identity_features(shape, 3), 1);
  DecoderParams dec;
  dec.weight = Matrix<float>::Zero(4, 4);
  dec.bias = Vector<float>::Zero(4);
  dec.bias(1) = 1.f;
  TriggerSet t;
  t.images = test::random_images(30, shape, 2);
  t.target = 1;
  CHECK(wsr(m, t, &dec) == 1.0);
}

TEST_CASE("WSR counts hand-built features") {
  const ImageShape shape{1, 2, 2};
  const Model m = make_model<float>(identity_features(shape, 3), 1);
  const DecoderParams dec = decoder_from_rows(Matrix<double>::Identity(4, 4));
  TriggerSet t;
  t.target = 2;
  t.images = test::random_images(100, shape, 3);
  t.images.images *= 0.5f;
  t.images.images.col(2).setOnes();
  t.images.images(57, 0) = 2.f;
  CHECK(wsr(m, t, &dec) == doctest::Approx(0.99));
}

TEST_CASE("report fields for a clear and a colliding vector") {
  const auto clear = make_report({0.1, 0.95, 0.2}, {0, 1, 2});
  CHECK(clear.predicted_leaker == 1);
  CHECK(clear.wsr_gap == doctest::Approx(0.75));
  CHECK(clear.over_threshold == std::vector<int>{1});
  CHECK(!clear.collision);
  const auto tie = make_report({0.9, 0.9}, {0, 1});
  CHECK(tie.predicted_leaker == 0);
  CHECK(tie.wsr_gap == doctest::Approx(0.0));
  CHECK(tie.collision);
}

TEST_CASE("tracing accuracy over a hundred suspects") {
  std::vector<VerificationReport> reps;
  std::vector<int> truth;
  for (int i = 0; i < 100; ++i) {
    reps.push_back(make_report({0.9, 0.1}, {0, 1}));
    truth.push_back(i < 13 ? 0 : 1);
  }
  CHECK(tacc(reps, truth) == doctest::Approx(0.13));
}

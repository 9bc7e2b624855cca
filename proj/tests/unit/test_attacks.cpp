#include "doctest.h"

#include <set>

#include "duw/attacks.hpp"
#include "duw/keying.hpp"

#include "helpers.hpp"

using namespace duw;

namespace {

const ImageShape kRow{1, 1, 5};
const ImageShape kImg{1, 8, 8};

Index zeros(const ParamSet<float>& p, const std::string& name) {
  return (p.at(name).values.array() == 0.f).count();
}

}  // namespace

TEST_CASE("magnitude pruning zeroes exactly the smallest weights") {
  Model m = make_model<float>(identity_features(kRow, 2), 1);
  auto& w = m.classifier.at("weight");
  w.matrix() << 0.5f, -0.1f, 0.9f, -0.05f, 0.3f, -0.7f, 0.2f, 0.01f, 0.6f, -0.4f;
  m.classifier.at("bias").values << 0.001f, -0.002f;
  const PruneMasks masks = magnitude_prune(m, 0.5);
  CHECK(masks.total == 10);
  CHECK(masks.pruned == 5);
  CHECK(zeros(m.classifier, "weight") == 5);
  RowMatrix<float> expected(2, 5);
  expected << 0.5f, 0, 0.9f, 0, 0, -0.7f, 0, 0, 0.6f, -0.4f;
  CHECK(RowMatrix<float>(w.matrix()) == expected);
  // biases are not pruned even though they are the smallest values
  CHECK(m.classifier.at("bias").values(0) == 0.001f);
  CHECK((masks.classifier.at("weight").values.array() == 0.f).count() == 5);
  CHECK(masks.classifier.at("bias").values.isOnes());
  CHECK_ERROR_CODE(magnitude_prune(m, 1.0), "invalid-argument");
}

TEST_CASE("pruning ties resolve by position") {
  Model m = make_model<float>(identity_features(kRow, 2), 1);
  m.classifier.at("weight").values.setConstant(0.3f);
  magnitude_prune(m, 0.3);
  const auto& v = m.classifier.at("weight").values;
  CHECK(v(0) == 0.f);
  CHECK(v(1) == 0.f);
  CHECK(v(2) == 0.f);
  CHECK(v(3) == 0.3f);
}

TEST_CASE("pruned weights stay zero through retraining") {
  const Model m = make_model<float>(small_cnn(kImg, 16, 4, false, 4, 4), 2);
  const ClientDataset client = test::make_client(0, test::random_images(40, kImg, 3, 4), test::random_images(8, kImg, 4, 4));
  Model pruned = m;
  const PruneMasks masks = magnitude_prune(pruned, 0.4);
  const Model attacked = prune_attack(m, client, 0.4, {3, 0.05f, 8, 1});
  for (const auto& [name, mask] : masks.feature)
    for (Index i = 0; i < mask.size(); ++i)
      if (mask.values[i] == 0.f) CHECK(attacked.feature.at(name).values[i] == 0.f);
  CHECK(checksum(attacked.feature) != checksum(pruned.feature));
}

TEST_CASE("zero-epoch attacks return the leaked model") {
  const Model m = make_model<float>(small_cnn(kImg, 16, 4), 2);
  const ClientDataset client = test::make_client(0, test::random_images(20, kImg, 3, 4), test::random_images(8, kImg, 4, 4));
  const Model ft = finetune_attack(m, client, {0, 0.1f, 8, 1});
  CHECK(checksum(ft.feature) == checksum(m.feature));
  CHECK(checksum(ft.classifier) == checksum(m.classifier));
  ExtractionConfig cfg;
  cfg.schedule.epochs = 0;
  cfg.warm_start = true;
  const ImageSet aux = test::random_images(10, kImg, 5);
  CHECK(checksum(extraction_attack(m, aux, cfg).feature) == checksum(m.feature));
  cfg.warm_start = false;
  CHECK(checksum(extraction_attack(m, aux, cfg).feature) != checksum(m.feature));
  CHECK_ERROR_CODE(extraction_attack(m, test::random_images(3, {1, 4, 4}, 1), cfg), "input-shape");
}

TEST_CASE("extraction trains on the victim's own predictions") {
  Model victim = make_model<float>(identity_features(kImg, 4), 2);
  victim.classifier.at("weight").values *= 20.f;
  const ImageSet aux = test::random_images(64, kImg, 6);
  ExtractionConfig cfg;
  cfg.schedule = {30, 0.05f, 16, 2};
  const Model stolen = extraction_attack(victim, aux, cfg);
  const auto labels = predict(victim, Head::classifier, aux.images);
  CHECK(std::set<int>(labels.begin(), labels.end()).size() > 1);
  const Model fresh = make_model<float>(victim.arch, derive_seed(2, {stream::attack, 1}));
  CHECK(accuracy(stolen, Head::classifier, aux.images, labels) > accuracy(fresh, Head::classifier, aux.images, labels));
}

TEST_CASE("parameter perturbation") {
  Model m = make_model<float>(small_cnn(kImg, 16, 4), 2);
  m.feature.begin()->second.values[0] = 0.f;
  const Model a = perturb_attack(m, 0.01, 7);
  const Model b = perturb_attack(m, 0.01, 7);
  CHECK(checksum(a.feature) == checksum(b.feature));
  CHECK(checksum(a.feature) != checksum(perturb_attack(m, 0.01, 8).feature));
  CHECK(checksum(perturb_attack(m, 0.0, 7).feature) == checksum(m.feature));
  // multiplicative noise keeps zeros at zero
  CHECK(a.feature.begin()->second.values[0] == 0.f);
  const auto& w = m.classifier.at("weight").values;
  const auto& wa = a.classifier.at("weight").values;
  CHECK(((wa - w).cwiseAbs().array() <= 0.1f * w.cwiseAbs().array() + 1e-7f).all());
  CHECK_ERROR_CODE(perturb_attack(m, -1.0, 7), "invalid-argument");
}

TEST_CASE("attacks never touch the decoder") {
  const DecoderParams dec = init_decoder(4, 16, 3);
  const auto before = decoder_checksum(dec);
  const Model m = attach_decoder(make_model<float>(small_cnn(kImg, 16, 4), 2), dec);
  const ClientDataset client = test::make_client(0, test::random_images(20, kImg, 3, 4), test::random_images(8, kImg, 4, 4));
  CHECK(!finetune_attack(m, client, {1, 0.01f, 8, 1}).decoder.has_value());
  CHECK(!prune_attack(m, client, 0.2, {1, 0.01f, 8, 1}).decoder.has_value());
  CHECK(!perturb_attack(m, 0.1, 1).decoder.has_value());
  CHECK(decoder_checksum(dec) == before);
}

TEST_CASE("median absolute deviation anomaly index") {
  int suspect = -1;
  // median 9.5, |dev| median 1.5, consistency constant 1.4826
  const double idx = mad_anomaly_index({8, 9, 10, 11, 12, 2}, &suspect);
  CHECK(idx == doctest::Approx((9.5 - 2) / (1.4826 * 1.5)).epsilon(1e-12));
  CHECK(suspect == 5);
  // norms above the median never count
  CHECK(mad_anomaly_index({1, 1, 1, 50}, &suspect) == 0.0);
  CHECK(suspect == -1);
  CHECK_ERROR_CODE(mad_anomaly_index({}), "invalid-argument");
}

TEST_CASE("trigger reverse engineering reports one norm per class") {
  const Model m = make_model<float>(small_cnn(kImg, 16, 3), 2);
  CleanseConfig cfg;
  cfg.steps = 20;
  const CleanseResult r = anomaly_index(m, test::random_images(16, kImg, 1), cfg);
  CHECK(r.mask_norms.size() == 3);
  CHECK(r.converged.size() == 3);
  for (double n : r.mask_norms) CHECK((n >= 0 && n <= kImg.plane()));
  CHECK(r.flagged == (r.anomaly_index > 2.0));
}

TEST_CASE("pruning at rate zero is plain fine-tuning") {
  const Model m = make_model<float>(small_cnn(kImg, 8, 3), 4);
  const ClientDataset client = test::make_client(0, test::random_images(20, kImg, 2, 3), test::random_images(6, kImg, 3, 3));
  const TrainSchedule s{2, 0.05f, 8, 5};
  const Model a = prune_attack(m, client, 0.0, s), b = finetune_attack(m, client, s);
  CHECK(checksum(a.feature) == checksum(b.feature));
  CHECK(checksum(a.classifier) == checksum(b.classifier));
}

TEST_CASE("a clean random model is not flagged") {
  const Model m = make_model<float>(small_cnn(kImg, 16, 5), 11);
  CleanseConfig cfg;
  cfg.steps = 100;
  const CleanseResult r = anomaly_index(m, test::random_images(64, kImg, 12), cfg);
  CHECK(r.anomaly_index <= 2.0);
  CHECK(!r.flagged);
}

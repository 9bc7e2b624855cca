#include "doctest.h"

#include <algorithm>
#include <set>

#include "duw/partition.hpp"

#include "helpers.hpp"

using namespace duw;

namespace {

const ImageShape kShape{1, 16, 16};

LabeledDataset digits(const std::string& domain = "plain", int train = 600, int test = 200) {
  return synthetic_digits(domain, train, test, kShape, 1);
}

std::multiset<int> all_train_ids(const std::vector<ClientDataset>& clients) {
  std::multiset<int> ids;
  for (const auto& c : clients) ids.insert(c.train.ids.begin(), c.train.ids.end());
  return ids;
}

}  // namespace

TEST_CASE("class partition assigns every sample of a held class exactly once") {
  const auto ds = digits();
  const auto clients = partition_by_class(ds, 10, 2, 5);
  REQUIRE(clients.size() == 10);
  std::set<int> held;
  for (const auto& c : clients) {
    CHECK(c.classes.size() == 2);
    held.insert(c.classes.begin(), c.classes.end());
    for (int y : c.train.labels) CHECK(std::binary_search(c.classes.begin(), c.classes.end(), y));
    for (int y : c.test.labels) CHECK(std::binary_search(c.classes.begin(), c.classes.end(), y));
    CHECK(c.train.size() > 0);
  }
  CHECK(held.size() == 10);
  const auto ids = all_train_ids(clients);
  CHECK(ids.size() == static_cast<std::size_t>(ds.train.size()));
  CHECK(std::set<int>(ids.begin(), ids.end()).size() == ids.size());
}

TEST_CASE("class partition is deterministic in its seed") {
  const auto ds = digits();
  const auto a = partition_by_class(ds, 8, 3, 9);
  const auto b = partition_by_class(ds, 8, 3, 9);
  const auto c = partition_by_class(ds, 8, 3, 10);
  bool differs = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].train.ids == b[k].train.ids);
    differs |= a[k].train.ids != c[k].train.ids;
  }
  CHECK(differs);
}

TEST_CASE("dirichlet partition conserves samples") {
  const auto ds = digits();
  for (double alpha : {0.1, 1.0, 100.0}) {
    const auto clients = partition_dirichlet(ds, 6, alpha, 3);
    for (const auto& c : clients) CHECK(c.train.size() > 0);
    const auto ids = all_train_ids(clients);
    CHECK(ids.size() == static_cast<std::size_t>(ds.train.size()));
    CHECK(std::set<int>(ids.begin(), ids.end()).size() == ids.size());
  }
  CHECK_ERROR_CODE(partition_dirichlet(ds, 6, 0.0, 3), "invalid-argument");
}

TEST_CASE("multi-domain assignment tags clients domain-major") {
  std::map<std::string, LabeledDataset> domains{{"bold", digits("bold", 200, 50)}, {"plain", digits("plain", 300, 50)}};
  const auto clients = multi_domain_assign(domains, 3, 4);
  REQUIRE(clients.size() == 6);
  for (int k = 0; k < 6; ++k) {
    CHECK(clients[k].client_id == k);
    CHECK(*clients[k].domain_tag == (k < 3 ? "bold" : "plain"));
  }
  int bold = 0, plain = 0;
  for (const auto& c : clients) (*c.domain_tag == "bold" ? bold : plain) += c.train.size();
  CHECK(bold == 200);
  CHECK(plain == 300);
}

TEST_CASE("stratified holdout takes the rounded fraction of every class") {
  const auto ds = digits();
  const Holdout h = holdout_validation(ds.train, 0.2, 6);
  const auto full = class_histogram(ds.train, 10);
  const auto val = class_histogram(h.validation, 10);
  const auto rest = class_histogram(h.train, 10);
  for (int c = 0; c < 10; ++c) {
    CHECK(val[c] == static_cast<int>(std::lround(0.2 * full[c])));
    CHECK(val[c] + rest[c] == full[c]);
  }
  CHECK_ERROR_CODE(holdout_validation(ds.train, 1.0, 6), "invalid-argument");
}

TEST_CASE("OoD pool sources") {
  OodRequest req;
  req.size = 20;
  req.training_domains = {"plain"};
  const OodPool held = make_ood_pool(req, 1);
  CHECK(held.images.size() == 20);
  CHECK(held.images.labels.empty());
  CHECK(held.source_tag == "held-out-domain:blocky");
  req.training_domains = {"plain", "blocky"};
  CHECK_ERROR_CODE(make_ood_pool(req, 1), "ood-leakage");
  req.source = OodSource::random_noise;
  const OodPool noise = make_ood_pool(req, 1);
  CHECK(noise.images.images.minCoeff() >= 0.f);
  CHECK(noise.images.images.maxCoeff() <= 1.f);
  req.source = OodSource::jigsaw;
  const OodPool jig = make_ood_pool(req, 1);
  // mirror extension without edge repeat: column 4 mirrors column 2, column 6 is column 0
  CHECK(jig.images.images(0, 4) == jig.images.images(0, 2));
  CHECK(jig.images.images(0, 6) == jig.images.images(0, 0));
  CHECK(jig.images.images(0, 16 * 5) == jig.images.images(0, 16 * 1));
  CHECK_ERROR_CODE(parse_ood_source("nonsense"), "invalid-argument");
}

TEST_CASE("too many clients for the data") {
  const auto ds = digits("plain", 20, 10);
  CHECK_ERROR_CODE(partition_by_class(ds, 40, 2, 1), "insufficient-data");
}

TEST_CASE("a single client holding every class owns the whole dataset") {
  const auto ds = digits("plain", 300, 100);
  const auto clients = partition_by_class(ds, 1, 10, 2);
  REQUIRE(clients.size() == 1);
  CHECK(clients[0].train.size() == ds.train.size());
  CHECK(clients[0].test.size() == ds.test.size());
}

TEST_CASE("dirichlet with a huge alpha splits evenly") {
  const auto ds = digits("plain", 1000, 100);
  const auto clients = partition_dirichlet(ds, 2, 1e6, 4);
  for (const auto& c : clients) CHECK(std::abs(c.train.size() - 500) <= 50);
}

TEST_CASE("multi-domain client count") {
  std::map<std::string, LabeledDataset> domains;
  for (const char* d : {"plain", "inverted", "cluttered", "bold"}) domains[d] = digits(d, 200, 20);
  CHECK(multi_domain_assign(domains, 10, 1).size() == 40);
}

TEST_CASE("holdout of 100 samples at 0.1") {
  const auto ds = digits("plain", 100, 10);
  const Holdout h = holdout_validation(ds.train, 0.1, 3);
  CHECK(h.train.size() == 90);
  CHECK(h.validation.size() == 10);
}

TEST_CASE("noise pool at a larger shape") {
  OodRequest req;
  req.source = OodSource::random_noise;
  req.shape = {1, 28, 28};
  const OodPool pool = make_ood_pool(req, 2);
  CHECK(pool.images.size() == 500);
  CHECK(pool.images.images.cols() == 784);
  CHECK(pool.images.shape.height == 28);
}

TEST_CASE("jigsaw images are fixed points of re-tiling their corner") {
  OodRequest req;
  req.source = OodSource::jigsaw;
  req.size = 8;
  const OodPool pool = make_ood_pool(req, 3);
  const ImageShape ts{1, 4, 4};
  RowMatrix<float> corner(8, 16);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) corner.col(y * 4 + x) = pool.images.images.col(y * 16 + x);
  CHECK(reflect_tile(corner, ts, req.shape) == pool.images.images);
}

#pragma once

#include "duw/data.hpp"
#include "duw/model.hpp"
#include "duw/partition.hpp"

namespace duw::test {

inline ImageSet random_images(int n, const ImageShape& shape, std::uint64_t seed, int num_classes = 0) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  ImageSet s;
  s.shape = shape;
  s.images.resize(n, shape.size());
  for (Index i = 0; i < s.images.size(); ++i) s.images.data()[i] = u(rng);
  for (int i = 0; i < n; ++i) {
    s.ids.push_back(i);
    if (num_classes > 0) s.labels.push_back(i % num_classes);
  }
  return s;
}

inline ClientDataset make_client(int id, const ImageSet& train, const ImageSet& test) {
  ClientDataset c;
  c.client_id = id;
  c.train = train;
  c.test = test;
  return c;
}

}  // namespace duw::test

// Checks that `expr` throws a duw::Error carrying `expected_code`.
#define CHECK_ERROR_CODE(expr, expected_code)             \
  do {                                                    \
    std::string got_code_ = "no error";                   \
    try {                                                 \
      (void)(expr);                                       \
    } catch (const duw::Error& e) {                       \
      got_code_ = e.code();                               \
    }                                                     \
    CHECK(got_code_ == std::string(expected_code));       \
  } while (0)

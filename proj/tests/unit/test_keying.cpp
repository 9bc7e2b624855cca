#include "doctest.h"

#include "duw/keying.hpp"

#include "helpers.hpp"

using namespace duw;

TEST_CASE("key length is the next power of two") {
  CHECK(default_key_length(1) == 1);
  CHECK(default_key_length(2) == 2);
  CHECK(default_key_length(3) == 4);
  CHECK(default_key_length(10) == 16);
  CHECK(default_key_length(16) == 16);
  CHECK(default_key_length(17) == 32);
  CHECK(default_key_length(40) == 64);
  CHECK(default_key_length(100) == 128);
}

TEST_CASE("keys are distinct one-hot vectors") {
  const auto keys = make_keys(10, 16);
  REQUIRE(keys.size() == 10);
  for (std::size_t k = 0; k < keys.size(); ++k) {
    CHECK(keys[k].client_id == static_cast<int>(k));
    CHECK(keys[k].length() == 16);
    int ones = 0;
    for (auto b : keys[k].bits) ones += b;
    CHECK(ones == 1);
    CHECK(keys[k].hot_index() == static_cast<int>(k));
  }
  // pairwise inner products are zero
  for (std::size_t a = 0; a < keys.size(); ++a)
    for (std::size_t b = a + 1; b < keys.size(); ++b) {
      int dot = 0;
      for (int i = 0; i < 16; ++i) dot += keys[a].bits[i] * keys[b].bits[i];
      CHECK(dot == 0);
    }
  CHECK_ERROR_CODE(make_keys(10, 8), "keyspace-too-small");
  ClientKey empty{0, std::vector<std::uint8_t>(4, 0)};
  CHECK_ERROR_CODE(empty.hot_index(), "invalid-key");
}

TEST_CASE("decoder rows are orthonormal") {
  for (int d : {4, 16, 64}) {
    const DecoderParams dec = init_decoder(d, 64, 42);
    CHECK(dec.key_length() == d);
    CHECK(dec.latent_dim() == 64);
    CHECK(dec.bias.isZero());
    const Matrix<double> w = dec.weight.cast<double>();
    const Matrix<double> gram = w * w.transpose();
    double off = 0, diag = 0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        if (i == j)
          diag = std::max(diag, std::abs(gram(i, j) - 1));
        else
          off = std::max(off, std::abs(gram(i, j)));
      }
    CHECK(off < 1e-5);
    CHECK(diag < 1e-5);
  }
  CHECK_ERROR_CODE(init_decoder(128, 64, 1), "rank-deficient-decoder");
}

TEST_CASE("orthonormal input rows come back unchanged") {
  Matrix<double> e = Matrix<double>::Zero(3, 5);
  e(0, 2) = 1;
  e(1, 0) = -1;
  e(2, 4) = 1;
  CHECK((orthonormal_rows(e) - e).norm() < 1e-12);
  Matrix<double> dependent(2, 3);
  dependent << 1, 2, 3, 2, 4, 6;
  CHECK_ERROR_CODE(orthonormal_rows(dependent), "rank-deficient-decoder");
}

TEST_CASE("decoder seed determines the matrix") {
  CHECK(decoder_checksum(init_decoder(16, 64, 7)) == decoder_checksum(init_decoder(16, 64, 7)));
  CHECK(decoder_checksum(init_decoder(16, 64, 7)) != decoder_checksum(init_decoder(16, 64, 8)));
}

TEST_CASE("attaching a decoder keeps the classifier active") {
  const Model m = make_model<float>(small_cnn({1, 8, 8}, 32, 4), 1);
  const DecoderParams dec = init_decoder(8, 32, 3);
  const Model a = attach_decoder(m, dec);
  CHECK(a.head == Head::classifier);
  CHECK(head_outputs(a, Head::decoder) == 8);
  CHECK(checksum(a.classifier) == checksum(m.classifier));
  CHECK(decoder_checksum(decoder_from_head(*a.decoder)) == decoder_checksum(dec));
  CHECK_ERROR_CODE(attach_decoder(m, init_decoder(8, 16, 3)), "architecture-mismatch");
}

TEST_CASE("small key spaces") {
  const auto three = make_keys(3, default_key_length(3));
  REQUIRE(three.size() == 3);
  for (const auto& k : three) CHECK(k.length() == 4);
  const auto one = make_keys(1, default_key_length(1));
  REQUIRE(one.size() == 1);
  CHECK(one[0].bits == std::vector<std::uint8_t>{1});
}

TEST_CASE("identity rows give an identity decoder") {
  const DecoderParams d = decoder_from_rows(Matrix<double>::Identity(2, 2));
  CHECK(d.weight.isApprox(Matrix<float>::Identity(2, 2)));
  CHECK(d.bias.isZero());
  CHECK(d.frozen);
}

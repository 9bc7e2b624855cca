#include "duw/keying.hpp"

#include <random>

#include "duw/error.hpp"
#include "duw/rng.hpp"

namespace duw {

int ClientKey::hot_index() const {
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) return static_cast<int>(i);
  fail("invalid-key", "key has no set bit");
}

std::vector<ClientKey> make_keys(int num_clients, int key_length) {
  require(num_clients >= 1, "invalid-argument", "need at least one client");
  require(key_length >= num_clients, "keyspace-too-small",
          "key length " + std::to_string(key_length) + " < " + std::to_string(num_clients) + " clients");
  std::vector<ClientKey> keys;
  for (int k = 0; k < num_clients; ++k) {
    ClientKey key{k, std::vector<std::uint8_t>(static_cast<std::size_t>(key_length), 0)};
    key.bits[static_cast<std::size_t>(k)] = 1;
    keys.push_back(std::move(key));
  }
  return keys;
}

int default_key_length(int num_clients) {
  int d = 1;
  while (d < num_clients) d *= 2;
  return d;
}

Matrix<double> orthonormal_rows(const Matrix<double>& seed_matrix) {
  const Index d = seed_matrix.rows(), n = seed_matrix.cols();
  require(d <= n, "rank-deficient-decoder",
          "cannot orthogonalize " + std::to_string(d) + " rows in a " + std::to_string(n) + "-dimensional space");
  Eigen::HouseholderQR<Matrix<double>> qr(seed_matrix.transpose());
  Matrix<double> q = qr.householderQ() * Matrix<double>::Identity(n, d);
  const Matrix<double> r = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
  for (Index i = 0; i < d; ++i) {
    require(std::abs(r(i, i)) > 1e-12, "rank-deficient-decoder", "seed rows are linearly dependent");
    if (r(i, i) < 0) q.col(i) *= -1.0;
  }
  return q.transpose();
}

DecoderParams decoder_from_rows(const Matrix<double>& rows) {
  DecoderParams dec;
  dec.weight = orthonormal_rows(rows).cast<float>();
  dec.bias = Vector<float>::Zero(rows.rows());
  dec.frozen = true;
  return dec;
}

DecoderParams init_decoder(int key_length, int latent_dim, std::uint64_t seed) {
  require(key_length >= 1, "invalid-argument", "key length must be positive");
  require(key_length <= latent_dim, "rank-deficient-decoder",
          "key length " + std::to_string(key_length) + " exceeds latent dimension " + std::to_string(latent_dim));
  Rng rng = make_rng(seed, {stream::decoder});
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix<double> g = Matrix<double>::NullaryExpr(key_length, latent_dim, [&] { return gauss(rng); });
  return decoder_from_rows(g);
}

ParamSet<float> decoder_head(const DecoderParams& decoder) {
  Tensor<float> w({decoder.key_length(), decoder.latent_dim()});
  w.matrix() = decoder.weight;
  Tensor<float> b({decoder.key_length()});
  b.values = decoder.bias;
  ParamSet<float> head;
  head["weight"] = std::move(w);
  head["bias"] = std::move(b);
  return head;
}

DecoderParams decoder_from_head(const ParamSet<float>& head) {
  DecoderParams dec;
  const auto& w = head.at("weight");
  dec.weight = w.matrix();
  dec.bias = head.at("bias").values;
  dec.frozen = true;
  return dec;
}

std::uint64_t decoder_checksum(const DecoderParams& decoder) { return checksum(decoder_head(decoder)); }

Model attach_decoder(Model model, const DecoderParams& decoder) {
  require(decoder.latent_dim() == model.latent_dim(), "architecture-mismatch",
          "decoder expects latent dimension " + std::to_string(decoder.latent_dim()) + ", model has " +
              std::to_string(model.latent_dim()));
  model.decoder = decoder_head(decoder);
  return model;
}

}  // namespace duw

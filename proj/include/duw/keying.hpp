#pragma once

#include <cstdint>
#include <vector>

#include "duw/model.hpp"
#include "duw/tensor.hpp"

namespace duw {

/// One-hot client key; doubles as the watermark target.
struct ClientKey {
  int client_id = 0;
  std::vector<std::uint8_t> bits;

  int length() const { return static_cast<int>(bits.size()); }
  int hot_index() const;
};

std::vector<ClientKey> make_keys(int num_clients, int key_length);

/// Smallest power of two >= num_clients.
int default_key_length(int num_clients);

/// Frozen single linear layer mapping latent features to key logits.
struct DecoderParams {
  Matrix<float> weight;  // (d, latent_dim), rows orthonormal
  Vector<float> bias;    // zeros
  bool frozen = true;

  int key_length() const { return static_cast<int>(weight.rows()); }
  int latent_dim() const { return static_cast<int>(weight.cols()); }
};

/// Orthonormalizes the rows of `seed_matrix` (d <= latent_dim). Signs follow
/// the input rows, so an orthonormal input comes back unchanged.
Matrix<double> orthonormal_rows(const Matrix<double>& seed_matrix);

/// Seeded Gaussian (d x latent_dim) matrix with orthonormalized rows.
DecoderParams init_decoder(int key_length, int latent_dim, std::uint64_t seed);
DecoderParams decoder_from_rows(const Matrix<double>& rows);

/// Head parameters in model layout.
ParamSet<float> decoder_head(const DecoderParams& decoder);
DecoderParams decoder_from_head(const ParamSet<float>& head);

std::uint64_t decoder_checksum(const DecoderParams& decoder);

/// Copy of `model` with the decoder attached (classifier stays active).
Model attach_decoder(Model model, const DecoderParams& decoder);

}  // namespace duw

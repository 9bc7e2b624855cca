#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duw/data.hpp"
#include "duw/keying.hpp"
#include "duw/layers.hpp"
#include "duw/partition.hpp"

namespace duw {

/// Key-conditioned image encoder E(x, s). The key is projected to one
/// spatial plane and stacked onto the image; a small conv body maps the
/// stack to a residual, the key plane is added to every channel of it, and
/// tanh of the sum, scaled by epsilon, is added to the image.
struct EncoderParams {
  ImageShape shape;
  int key_length = 0;
  float epsilon = 8.0f / 255.0f;
  int hidden = 16;
  ParamSet<float> key_projection;  // "weight" (H*W, d), "bias" (H*W)
  ParamSet<float> body;

  Stack body_stack() const;
};

EncoderParams init_encoder(const ImageShape& shape, int key_length, float epsilon, std::uint64_t seed, int hidden = 16);

/// E(x, s) for a batch; `keys` holds one bit string per image row (n, d) or
/// a single row broadcast to all images. Outputs are clipped to [0,1] and
/// satisfy |E(x,s) - x| <= epsilon elementwise.
RowMatrix<float> encode(const EncoderParams& encoder, const RowMatrix<float>& images, const RowMatrix<float>& keys);

struct EncoderTraining {
  int max_steps = 30000;
  int batch_size = 32;
  float lr = 2e-3f;
  double target_bit_accuracy = 0.99;
  int eval_every = 250;
  double holdout_fraction = 0.1;
};

struct EncoderReport {
  double probe_bit_accuracy = 0;
  int steps = 0;
  double mean_key_distance = 0;  // mean |E(x,s1) - E(x,s2)| per pixel for distinct keys
  double max_perturbation = 0;
  std::vector<std::pair<int, double>> history;  // (step, held-out bit accuracy)
};

struct PretrainedEncoder {
  EncoderParams encoder;
  EncoderReport report;
};

/// Trains the encoder jointly with a throwaway bit-extraction probe on
/// uniformly random keys. Throws "encoder-underfit" when the held-out
/// probe bit accuracy misses the target within the step budget.
PretrainedEncoder pretrain_encoder(const ImageSet& corpus, int key_length, float epsilon, std::uint64_t seed,
                                   const EncoderTraining& training = {});

/// On-disk encoder cache: parameter directory plus geometry and report.
void save_encoder(const std::filesystem::path& dir, const PretrainedEncoder& encoder);
PretrainedEncoder load_encoder(const std::filesystem::path& dir);

enum class TargetSpace { decoder, classifier };

struct TriggerSet {
  int client_id = 0;
  ImageSet images;                  // ids point into the OoD pool
  std::vector<std::uint8_t> key;    // client key used for encoding (empty for badnet)
  int target = 0;                   // key hot index (decoder) or class label (classifier)
  TargetSpace space = TargetSpace::decoder;
  std::string source_tag;
  std::uint64_t seed = 0;

  int size() const { return images.size(); }
};

/// Draws `size` pool images (depends only on `seed`) and encodes them with the key.
TriggerSet encode_trigger_set(const OodPool& pool, const ClientKey& key, const EncoderParams& encoder, int size,
                              std::uint64_t seed);

/// Same sample draw, target re-expressed in classifier space as
/// client_id % num_classes (the decoder-free ablation).
TriggerSet to_classifier_space(TriggerSet set, int num_classes);

enum class BadnetKind { random_noise, zero_one };

BadnetKind parse_badnet_kind(const std::string& name);

/// Client-specific 4x4 patch (channels share the pattern).
RowMatrix<float> badnet_patch(int client_id, BadnetKind kind, std::uint64_t seed);

/// Pastes the client's patch at the bottom-right corner of `size` pool
/// images; target = client_id % num_classes in classifier space.
TriggerSet badnet_trigger_set(const OodPool& pool, int client_id, BadnetKind kind, int num_classes, int size,
                              std::uint64_t seed);

/// Directory archive: index.json plus raw little-endian float32 images per client.
void write_trigger_archive(const std::filesystem::path& dir, const std::vector<TriggerSet>& sets);
std::vector<TriggerSet> read_trigger_archive(const std::filesystem::path& dir);

}  // namespace duw

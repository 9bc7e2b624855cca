#include "duw/model.hpp"

namespace duw {

int Architecture::latent_dim() const {
  const ImageShape out = feature_stack().output();
  require(out.plane() == 1, "input-shape", "feature extractor must end in a flat latent vector");
  return out.channels;
}

Architecture small_cnn(const ImageShape& input, int latent_dim, int num_classes, bool batch_norm, int conv1_channels,
                       int conv2_channels) {
  require(latent_dim > 0 && num_classes > 0, "invalid-argument", "latent_dim and num_classes must be positive");
  Architecture arch;
  arch.id = batch_norm ? "small_cnn_bn" : "small_cnn";
  arch.input = input;
  arch.num_classes = num_classes;
  auto& L = arch.feature_layers;
  for (int channels : {conv1_channels, conv2_channels}) {
    L.push_back({LayerKind::conv3x3, channels});
    if (batch_norm) L.push_back({LayerKind::batch_norm});
    L.push_back({LayerKind::relu});
    L.push_back({LayerKind::max_pool2});
  }
  L.push_back({LayerKind::flatten});
  L.push_back({LayerKind::linear, latent_dim});
  L.push_back({LayerKind::relu});
  return arch;
}

Architecture identity_features(const ImageShape& input, int num_classes) {
  Architecture arch;
  arch.id = "identity";
  arch.input = input;
  arch.num_classes = num_classes;
  arch.feature_layers = {{LayerKind::flatten}};
  return arch;
}

}  // namespace duw

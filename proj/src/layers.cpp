#include "duw/layers.hpp"

namespace duw {

const char* layer_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::max_pool2: return "max_pool2";
    case LayerKind::flatten: return "flatten";
    case LayerKind::linear: return "linear";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (auto kind : {LayerKind::conv3x3, LayerKind::batch_norm, LayerKind::relu, LayerKind::tanh,
                    LayerKind::max_pool2, LayerKind::flatten, LayerKind::linear})
    if (name == layer_name(kind)) return kind;
  fail("unknown-layer", "unknown layer kind '" + name + "'");
}

std::vector<ImageShape> Stack::shapes() const {
  std::vector<ImageShape> out{input};
  ImageShape s = input;
  for (const auto& layer : layers) {
    switch (layer.kind) {
      case LayerKind::conv3x3:
        s.channels = layer.out;
        break;
      case LayerKind::max_pool2:
        require(s.height % 2 == 0 && s.width % 2 == 0, "input-shape", "max_pool2 needs even spatial size");
        s.height /= 2;
        s.width /= 2;
        break;
      case LayerKind::flatten:
        s = {s.size(), 1, 1};
        break;
      case LayerKind::linear:
        require(s.plane() == 1, "input-shape", "linear layer needs flattened input");
        s = {layer.out, 1, 1};
        break;
      default:
        break;
    }
    out.push_back(s);
  }
  return out;
}

bool Stack::has_batch_norm() const {
  return std::any_of(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::batch_norm; });
}

}  // namespace duw

#pragma once

#include <filesystem>

#include "json.hpp"

#include "duw/keying.hpp"
#include "duw/model.hpp"

namespace duw {

nlohmann::json to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

/// model.json (architecture, active head, seed) plus a parameter directory
/// with "feature/", "state/" and "classifier/" tensors. A decoder attached
/// to the model is not written; decoders live under their own path.
void save_model(const std::filesystem::path& dir, const Model& model);
Model load_model(const std::filesystem::path& dir);

void save_decoder(const std::filesystem::path& dir, const DecoderParams& decoder);
DecoderParams load_decoder(const std::filesystem::path& dir);

}  // namespace duw

#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "duw/tensor.hpp"

namespace duw {

/// Raw little-endian float32 blobs.
void write_floats(const std::filesystem::path& path, const float* data, std::size_t count);
void read_floats(const std::filesystem::path& path, float* data, std::size_t count);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// One .bin per tensor under `dir` plus a manifest.json with names, shapes,
/// files and a checksum. Names may contain '/' to form sub-directories.
void save_params(const std::filesystem::path& dir, const ParamSet<float>& params);

/// Throws "cache-invalid" when the manifest is missing, a file is short or
/// the recomputed checksum differs.
ParamSet<float> load_params(const std::filesystem::path& dir);

std::string hex64(std::uint64_t v);

}  // namespace duw

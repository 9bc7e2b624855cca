#include "duw/io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace duw {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "float blobs are written in host order");

void write_floats(const fs::path& path, const float* data, std::size_t count) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "io-error", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  require(bool(out), "io-error", "short write to " + path.string());
}

void read_floats(const fs::path& path, float* data, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), "cache-invalid", "cannot read " + path.string());
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  require(in.gcount() == static_cast<std::streamsize>(count * sizeof(float)), "cache-invalid",
          "truncated blob " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(bool(in), "cache-invalid", "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail("cache-invalid", path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& value) {
  write_text(path, value.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(bool(out), "io-error", "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  require(bool(in), "io-error", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void save_params(const fs::path& dir, const ParamSet<float>& params) {
  fs::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : params) {
    const std::string file = name + ".bin";
    write_floats(dir / file, t.values.data(), static_cast<std::size_t>(t.size()));
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"file", file}});
  }
  write_json(dir / "manifest.json", {{"format", "float32-le"}, {"tensors", tensors}, {"checksum", hex64(checksum(params))}});
}

ParamSet<float> load_params(const fs::path& dir) {
  const auto manifest = read_json(dir / "manifest.json");
  ParamSet<float> params;
  try {
    for (const auto& entry : manifest.at("tensors")) {
      Tensor<float> t(entry.at("shape").get<std::vector<int>>());
      read_floats(dir / entry.at("file").get<std::string>(), t.values.data(), static_cast<std::size_t>(t.size()));
      params[entry.at("name").get<std::string>()] = std::move(t);
    }
    require(hex64(checksum(params)) == manifest.at("checksum").get<std::string>(), "cache-invalid",
            "checksum mismatch in " + dir.string());
  } catch (const nlohmann::json::exception& e) {
    fail("cache-invalid", dir.string() + ": " + e.what());
  }
  return params;
}

}  // namespace duw

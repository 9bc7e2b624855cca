#include "duw/checkpoint.hpp"

#include "duw/io.hpp"

namespace duw {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const Architecture& arch) {
  json layers = json::array();
  for (const auto& l : arch.feature_layers) layers.push_back({{"kind", layer_name(l.kind)}, {"out", l.out}});
  return {{"id", arch.id},
          {"input", {arch.input.channels, arch.input.height, arch.input.width}},
          {"layers", layers},
          {"num_classes", arch.num_classes}};
}

Architecture architecture_from_json(const json& j) {
  Architecture a;
  try {
    a.id = j.at("id").get<std::string>();
    const auto in = j.at("input").get<std::vector<int>>();
    require(in.size() == 3, "cache-invalid", "input shape needs three entries");
    a.input = {in[0], in[1], in[2]};
    for (const auto& l : j.at("layers"))
      a.feature_layers.push_back({parse_layer_kind(l.at("kind").get<std::string>()), l.at("out").get<int>()});
    a.num_classes = j.at("num_classes").get<int>();
  } catch (const json::exception& e) {
    fail("cache-invalid", std::string("architecture record: ") + e.what());
  }
  return a;
}

void save_model(const fs::path& dir, const Model& m) {
  ParamSet<float> all;
  for (const auto& [n, t] : m.feature) all["feature/" + n] = t;
  for (const auto& [n, t] : m.feature_state) all["state/" + n] = t;
  for (const auto& [n, t] : m.classifier) all["classifier/" + n] = t;
  save_params(dir / "params", all);
  write_json(dir / "model.json", {{"arch", to_json(m.arch)}, {"head", "classifier"}, {"seed", m.seed}});
}

Model load_model(const fs::path& dir) {
  const auto meta = read_json(dir / "model.json");
  Model m;
  try {
    m.arch = architecture_from_json(meta.at("arch"));
    m.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail("cache-invalid", std::string("model record: ") + e.what());
  }
  for (auto& [n, t] : load_params(dir / "params")) {
    const auto slash = n.find('/');
    const std::string group = n.substr(0, slash), name = n.substr(slash + 1);
    if (group == "feature")
      m.feature[name] = std::move(t);
    else if (group == "state")
      m.feature_state[name] = std::move(t);
    else if (group == "classifier")
      m.classifier[name] = std::move(t);
    else
      fail("cache-invalid", "unexpected tensor group '" + group + "'");
  }
  const Model fresh = make_model<float>(m.arch, 0);
  try {
    check_compatible(fresh.feature, m.feature);
    check_compatible(fresh.feature_state, m.feature_state);
    check_compatible(fresh.classifier, m.classifier);
  } catch (const Error&) {
    fail("cache-invalid", "checkpoint tensors do not match the stored architecture");
  }
  return m;
}

void save_decoder(const fs::path& dir, const DecoderParams& decoder) {
  save_params(dir, decoder_head(decoder));
}

DecoderParams load_decoder(const fs::path& dir) {
  return decoder_from_head(load_params(dir));
}

}  // namespace duw

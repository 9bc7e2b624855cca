#include "doctest.h"

#include <filesystem>

#include "duw/checkpoint.hpp"
#include "duw/config.hpp"
#include "duw/io.hpp"
#include "duw/keying.hpp"

#include "helpers.hpp"

using namespace duw;
namespace fs = std::filesystem;

TEST_CASE("toml subset") {
  const auto j = parse_toml(R"(
# comment
name = "x"   # trailing comment
seed = 7
[federation]
local_lr = 0.05
rounds = 3
[data]
shape = [1, 8, 8]
domains = ["plain", "bold"]
[a.b]
flag = true
neg = -2.5e-3
)");
  CHECK(j["name"] == "x");
  CHECK(j["seed"] == 7);
  CHECK(j["federation"]["local_lr"].get<double>() == doctest::Approx(0.05));
  CHECK(j["data"]["shape"] == nlohmann::json({1, 8, 8}));
  CHECK(j["data"]["domains"][1] == "bold");
  CHECK(j["a"]["b"]["flag"] == true);
  CHECK(j["a"]["b"]["neg"].get<double>() == doctest::Approx(-2.5e-3));
  CHECK_ERROR_CODE(parse_toml("x = "), "config-error");
  CHECK_ERROR_CODE(parse_toml("[open"), "config-error");
  CHECK_ERROR_CODE(parse_toml("just words"), "config-error");
  CHECK_ERROR_CODE(parse_toml("s = \"unterminated"), "config-error");
}

TEST_CASE("config tree maps onto the run settings") {
  nlohmann::json j = parse_toml(R"(
seed = 3
[partition]
clients = 20
[federation]
rounds = 4
start_round = 1
local_steps = 7
[injection]
beta = 0.5
[watermark]
mode = "classifier"
trigger_size = 20
)");
  const RunConfig c = run_config_from_json(j);
  CHECK(c.seed == 3);
  CHECK(c.partition.clients == 20);
  CHECK(c.rounds == 4);
  CHECK(c.round.injection_start_round == 1);
  CHECK(c.round.local_steps == 7);
  CHECK(c.injection.beta == doctest::Approx(0.5));
  CHECK(c.watermark.mode == "classifier");
  CHECK(c.key_length() == 32);
  // serialization roundtrip
  const RunConfig back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("config errors") {
  CHECK_ERROR_CODE(run_config_from_json(parse_toml("[federation]\nroundz = 3")), "config-error");
  CHECK_ERROR_CODE(run_config_from_json(parse_toml("[federation]\nrounds = \"many\"")), "config-error");
  CHECK_ERROR_CODE(run_config_from_json(parse_toml("[watermark]\nmode = \"stamp\"")), "config-error");
  CHECK_ERROR_CODE(run_config_from_json(parse_toml("[watermark]\nkey_length = 4")), "config-error");
  CHECK_ERROR_CODE(run_config_from_json(parse_toml("[federation]\nrounds = 3\nstart_round = 5")), "config-error");
  CHECK_ERROR_CODE(run_config_from_json(parse_toml("[watermark]\ntrigger_size = 600")), "config-error");
  CHECK_ERROR_CODE(load_run_config(std::nullopt, std::string("/nonexistent/run.toml"), std::nullopt), "config-error");
}

TEST_CASE("presets") {
  const auto& names = preset_names();
  CHECK(names.size() >= 10);
  for (const auto& n : names) {
    const RunConfig c = run_config_from_json(preset_json(n));
    CHECK(c.name == n);
  }
  const RunConfig desk = load_run_config(std::string("benchmark-digits-desk"), std::nullopt, 9);
  CHECK(desk.seed == 9);
  CHECK(desk.desk_runnable);
  CHECK(desk.partition.clients == 10);
  CHECK(desk.key_length() == 16);
  CHECK(!load_run_config(std::string("benchmark-cifar10-paper"), std::nullopt, std::nullopt).desk_runnable);
  CHECK(load_run_config(std::string("pitfall-badnet"), std::nullopt, std::nullopt).key_length() == 64);
  CHECK_ERROR_CODE(preset_json("no-such-preset"), "unknown-preset");

  const fs::path file = fs::temp_directory_path() / "duw-unit-override.toml";
  write_text(file, "[federation]\nrounds = 7\n");
  const RunConfig over = load_run_config(std::string("ablate-beta"), file.string(), std::nullopt);
  CHECK(over.rounds == 7);
  CHECK(over.injection.beta == 0.f);
  fs::remove(file);
}

TEST_CASE("model checkpoint roundtrip") {
  const fs::path dir = fs::temp_directory_path() / "duw-unit-ckpt";
  fs::remove_all(dir);
  Model m = make_model<float>(small_cnn({1, 8, 8}, 16, 4, true, 4, 4), 12);
  m.feature_state.begin()->second.values.setConstant(0.25f);
  save_model(dir / "model", attach_decoder(m, init_decoder(4, 16, 1)));
  const Model back = load_model(dir / "model");
  CHECK(back.arch == m.arch);
  CHECK(checksum(back.feature) == checksum(m.feature));
  CHECK(checksum(back.feature_state) == checksum(m.feature_state));
  CHECK(checksum(back.classifier) == checksum(m.classifier));
  CHECK(!back.decoder.has_value());
  const RowMatrix<float> x = test::random_images(3, {1, 8, 8}, 2).images;
  CHECK(forward(back, Head::classifier, x) == forward(m, Head::classifier, x));

  const DecoderParams dec = init_decoder(8, 16, 4);
  save_decoder(dir / "decoder", dec);
  CHECK(decoder_checksum(load_decoder(dir / "decoder")) == decoder_checksum(dec));

  // flipping bytes of a tensor breaks its checksum
  for (const auto& e : fs::recursive_directory_iterator(dir / "model"))
    if (e.is_regular_file() && e.path().extension() == ".bin") {
      std::string bytes = read_text(e.path());
      bytes[0] = static_cast<char>(bytes[0] ^ 0x5a);
      write_text(e.path(), bytes);
      break;
    }
  CHECK_ERROR_CODE(load_model(dir / "model"), "cache-invalid");
  CHECK_ERROR_CODE(load_model(dir / "absent"), "cache-invalid");
  fs::remove_all(dir);
}

TEST_CASE("shipped configs layer over the desk preset") {
  int seen = 0;
  for (const auto& e : fs::directory_iterator(fs::path(DUW_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".toml") continue;
    CAPTURE(e.path().string());
    const RunConfig c = load_run_config(std::string("benchmark-digits-desk"), e.path().string(), std::nullopt);
    CHECK(c.desk_runnable);
    ++seen;
  }
  CHECK(seen >= 1);
}

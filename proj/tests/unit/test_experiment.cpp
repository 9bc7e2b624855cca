#include "doctest.h"

#include <filesystem>

#include "duw/checkpoint.hpp"
#include "duw/experiment.hpp"
#include "duw/io.hpp"

#include "helpers.hpp"

using namespace duw;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const std::string& mode) {
  RunConfig c = run_config_from_json(parse_toml(R"(
seed = 4
[data]
train_per_client = 60
test_count = 100
[partition]
clients = 3
[federation]
rounds = 3
start_round = 1
local_steps = 5
[watermark]
trigger_size = 10
[ood]
pool_size = 40
)"));
  c.watermark.mode = mode;
  return c;
}

}  // namespace

TEST_CASE("client selection") {
  CHECK(choose_clients(10, 0, 1, 5).size() == 10);
  CHECK(choose_clients(10, 20, 1, 5).size() == 10);
  const auto three = choose_clients(10, 3, 1, 5);
  CHECK(three.size() == 3);
  CHECK(std::is_sorted(three.begin(), three.end()));
  CHECK(choose_clients(10, 3, 1, 5) == three);
}

TEST_CASE("run directory roundtrip") {
  const RunConfig c = tiny_config("badnet-zero-one");
  const Workspace ws = prepare_workspace(c, {});
  CHECK(ws.clients.size() == 3);
  REQUIRE(ws.triggers.size() == 3);
  CHECK(ws.triggers[1].space == TargetSpace::classifier);
  const RunResult result = run_experiment(ws, {});
  CHECK(result.state.round == 3);
  CHECK(result.baseline.has_value());
  CHECK(result.leakers.size() == 3);
  CHECK(result.summary.delta_acc == doctest::Approx(result.summary.baseline_acc - result.summary.acc));

  const fs::path dir = fs::temp_directory_path() / "duw-unit-run";
  fs::remove_all(dir);
  write_run(dir, ws, result);
  for (const char* f : {"manifest.json", "metrics.csv", "summary.csv", "partition.json", "verification.csv"})
    CHECK(fs::exists(dir / f));

  const StoredRun stored = load_run(dir);
  CHECK(stored.leaked.size() == 3);
  CHECK(stored.baseline_leaked.size() == 3);
  CHECK(stored.baseline_global.has_value());
  CHECK(stored.triggers.size() == 3);
  CHECK(checksum(stored.global.feature) == checksum(result.state.global.feature));

  // verifying a stored leaked model reproduces the in-memory report
  const VerifyOutcome v = verify_suspect(dir, dir / "clients" / "1" / "leaked", 0.5);
  const VerificationReport direct = verify_model(ws, result.state.leaked.at(1));
  CHECK(v.report.wsr == direct.wsr);
  CHECK(!v.verdict.empty());

  const auto written = write_report(dir);
  CHECK(fs::exists(dir / "report" / "rounds.svg"));
  CHECK(fs::exists(dir / "report" / "summary.md"));
  CHECK(written.size() == 2);

  AttackSpec spec;
  spec.kinds = {"perturb", "prune"};
  spec.malicious = 2;
  spec.alphas = {0.0, 1e-3};
  spec.prune_rates = {0.0, 0.2};
  spec.epochs = 1;
  const AttackReport report = run_attacks(ws, stored.leaked, nullptr, *stored.baseline_global, spec, {});
  CHECK(report.rows.size() == 8);
  REQUIRE(report.summary.size() == 4);
  // zero noise changes nothing
  CHECK(report.summary[0].delta_wsr == 0.0);
  CHECK(report.summary[0].delta_acc == 0.0);
  write_attack_report(dir / "attacks", report);
  CHECK(fs::exists(dir / "attacks" / "perturb.csv"));
  CHECK(write_report(dir).size() == 4);
  fs::remove_all(dir);
}

TEST_CASE("run errors") {
  CHECK_ERROR_CODE(load_run(fs::temp_directory_path() / "duw-unit-no-run"), "missing-run");
  const fs::path dir = fs::temp_directory_path() / "duw-unit-empty-run";
  fs::create_directories(dir);
  write_text(dir / "metrics.csv", "");
  CHECK_ERROR_CODE(write_report(dir), "missing-metrics");
  fs::remove_all(dir);
  RunConfig c = tiny_config("duw");
  c.data.domains = {"plain", "blocky"};
  CHECK_ERROR_CODE(prepare_workspace(c, {}), "ood-leakage");
}

TEST_CASE("encoder cache") {
  RunConfig c = tiny_config("duw");
  c.encoder.corpus_size = 400;
  c.encoder.max_steps = 4000;
  c.encoder.cache = (fs::temp_directory_path() / "duw-unit-encoder-cache").string();
  fs::remove_all(c.encoder.cache);
  std::vector<std::string> lines;
  const Log log = [&](const std::string& m) { lines.push_back(m); };
  const PretrainedEncoder first = obtain_encoder(c, 4, log);
  const fs::path path = encoder_cache_path(c, 4);
  CHECK(fs::exists(path));
  lines.clear();
  const PretrainedEncoder second = obtain_encoder(c, 4, log);
  REQUIRE(!lines.empty());
  CHECK(lines[0].find("cache hit") != std::string::npos);
  CHECK(checksum(second.encoder.body) == checksum(first.encoder.body));
  CHECK(checksum(second.encoder.key_projection) == checksum(first.encoder.key_projection));

  for (const auto& e : fs::recursive_directory_iterator(path))
    if (e.is_regular_file() && e.path().extension() != ".json") {
      fs::resize_file(e.path(), fs::file_size(e.path()) / 2);
      break;
    }
  CHECK_ERROR_CODE(obtain_encoder(c, 4, {}), "cache-invalid");
  fs::remove_all(c.encoder.cache);
}

TEST_CASE("a run without watermark is plain FedAvg") {
  const RunConfig c = tiny_config("none");
  const Workspace ws = prepare_workspace(c, {});
  const RunResult result = run_experiment(ws, {});
  FederationState manual = make_federation(ws.arch, ws.clients, ws.validation, c.seed);
  for (int r = 0; r < c.rounds; ++r) run_round(manual, c.round);
  CHECK(checksum(result.state.global.feature) == checksum(manual.global.feature));
  CHECK(checksum(result.state.global.feature_state) == checksum(manual.global.feature_state));
  CHECK(checksum(result.state.global.classifier) == checksum(manual.global.classifier));
}

TEST_CASE("attack and report outputs are reproducible") {
  const RunConfig c = tiny_config("badnet-random-noise");
  const Workspace ws = prepare_workspace(c, {});
  const RunResult result = run_experiment(ws, {});
  CHECK(summary_csv(result.summary).rfind("Acc,dAcc,WSR,WSR_Gap,TAcc,", 0) == 0);

  const fs::path dir = fs::temp_directory_path() / "duw-unit-repro";
  fs::remove_all(dir);
  write_run(dir, ws, result);
  AttackSpec spec;
  spec.kinds = {"finetune", "perturb"};
  spec.malicious = 2;
  spec.alphas = {1e-2};
  spec.epochs = 1;
  auto attack_bytes = [&](const std::string& sub) {
    write_attack_report(dir / sub, run_attacks(ws, result.state.leaked, nullptr, result.state.global, spec, {}));
    return read_text(dir / sub / "summary.csv") + read_text(dir / sub / "finetune.csv") +
           read_text(dir / sub / "perturb.csv");
  };
  CHECK(attack_bytes("a") == attack_bytes("b"));

  write_report(dir);
  const std::string svg = read_text(dir / "report" / "rounds.svg"), md = read_text(dir / "report" / "summary.md");
  write_report(dir);
  CHECK(read_text(dir / "report" / "rounds.svg") == svg);
  CHECK(read_text(dir / "report" / "summary.md") == md);
  fs::remove_all(dir);
}

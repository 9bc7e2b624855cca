#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "duw/checkpoint.hpp"
#include "duw/experiment.hpp"
#include "duw/io.hpp"

namespace fs = std::filesystem;
using namespace duw;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "TOML run configuration");
  cmd->add_option("--preset", c.preset, "named preset (see `duw presets`)");
  cmd->add_option("--seed", c.seed, "root seed override");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_flag("--quiet", c.quiet, "suppress progress lines");
}

RunConfig config_of(const Common& c) {
  return load_run_config(c.preset.empty() ? std::nullopt : std::optional<std::string>(c.preset),
                         c.config.empty() ? std::nullopt : std::optional<std::string>(c.config), c.seed);
}

Log logger(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& msg) { std::cerr << "[duw] " << msg << "\n"; };
}

// Rebuilds the federation of a stored run and swaps in its persisted
// decoder and trigger archive.
Workspace replay_workspace(const StoredRun& run, const Log& log) {
  Workspace ws = prepare_workspace(run.config, log, false);
  if (run.decoder) ws.decoder = *run.decoder;
  ws.triggers = run.triggers;
  ws.unified = run.unified;
  return ws;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decodable unique watermarking for federated learning"};
  app.require_subcommand(1);

  Common pre, run, atk, ver, rep;
  bool force = false;
  std::string run_dir, suspect;
  std::optional<double> sigma;

  auto* c_pre = app.add_subcommand("pretrain-encoder", "pre-train (or load cached) the trigger encoder");
  add_common(c_pre, pre);
  auto* c_run = app.add_subcommand("run", "federated training with watermark injection");
  add_common(c_run, run);
  c_run->add_flag("--force", force, "run presets marked as not desk-runnable");
  auto* c_atk = app.add_subcommand("attack", "attack the leaked models of a run");
  add_common(c_atk, atk);
  c_atk->add_option("--run", run_dir, "run directory")->required();
  auto* c_ver = app.add_subcommand("verify", "trace a suspect model back to its leaker");
  add_common(c_ver, ver);
  c_ver->add_option("--run", run_dir, "run directory")->required();
  c_ver->add_option("--suspect", suspect, "suspect model checkpoint directory")->required();
  c_ver->add_option("--sigma", sigma, "ownership threshold");
  auto* c_rep = app.add_subcommand("report", "figures and summary table from a run's CSVs");
  add_common(c_rep, rep);
  c_rep->add_option("--run", run_dir, "run directory")->required();
  auto* c_presets = app.add_subcommand("presets", "list built-in presets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_pre->parsed()) {
      const RunConfig c = config_of(pre);
      const PretrainedEncoder enc = obtain_encoder(c, c.key_length(), logger(pre));
      const auto& r = enc.report;
      const nlohmann::json report{{"probe_bit_accuracy", r.probe_bit_accuracy},
                                  {"steps", r.steps},
                                  {"mean_key_distance", r.mean_key_distance},
                                  {"max_perturbation", r.max_perturbation},
                                  {"cache", encoder_cache_path(c, c.key_length()).string()}};
      if (!pre.out.empty()) {
        save_encoder(fs::path(pre.out) / "encoder", enc);
        write_json(fs::path(pre.out) / "encoder_report.json", report);
      }
      std::cout << report.dump(2) << "\n";
    } else if (c_run->parsed()) {
      const RunConfig c = config_of(run);
      if (!c.desk_runnable && !force)
        fail("not-desk-runnable", "preset '" + c.name + "' is paper-scale; pass --force to run it anyway");
      const fs::path out = run.out.empty() ? fs::path("runs") / c.name : fs::path(run.out);
      const Log log = logger(run);
      const Workspace ws = prepare_workspace(c, log);
      const RunResult result = run_experiment(ws, log);
      write_run(out, ws, result);
      std::cout << summary_csv(result.summary);
      std::cout << "run written to " << out.string() << "\n";
    } else if (c_atk->parsed()) {
      const Log log = logger(atk);
      const StoredRun stored = load_run(run_dir);
      // attack settings come from --preset/--config when given, else from the run itself
      const AttackSpec spec =
          atk.preset.empty() && atk.config.empty() ? stored.config.attack : config_of(atk).attack;
      if (spec.kinds.empty()) fail("config-error", "no attack kinds configured");
      const Workspace ws = replay_workspace(stored, log);
      const AttackReport report =
          run_attacks(ws, stored.leaked, stored.baseline_leaked.empty() ? nullptr : &stored.baseline_leaked,
                      stored.baseline_global ? *stored.baseline_global : stored.global, spec, log);
      const fs::path out = atk.out.empty() ? fs::path(run_dir) / "attacks" : fs::path(atk.out);
      write_attack_report(out, report);
      std::cout << read_text(out / "summary.csv");
    } else if (c_ver->parsed()) {
      const double s = sigma.value_or(load_run(run_dir).config.watermark.sigma);
      const VerifyOutcome v = verify_suspect(run_dir, suspect, s);
      const fs::path out = ver.out.empty() ? fs::path(run_dir) / "verify" : fs::path(ver.out);
      write_json(out / "report.json", to_json(v.report));
      std::cout << v.verdict << "\n";
    } else if (c_rep->parsed()) {
      for (const auto& p : write_report(run_dir)) std::cout << p.string() << "\n";
    } else if (c_presets->parsed()) {
      for (const auto& name : preset_names()) std::cout << name << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

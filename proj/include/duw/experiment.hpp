#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "duw/config.hpp"
#include "duw/fl.hpp"
#include "duw/keying.hpp"
#include "duw/trigger.hpp"
#include "duw/verification.hpp"

namespace duw {

using Log = std::function<void(const std::string&)>;

/// Everything a run derives deterministically from its config before training.
struct Workspace {
  RunConfig config;
  Architecture arch;
  LabeledDataset dataset;
  std::vector<ClientDataset> clients;
  ImageSet validation;
  OodPool pool;
  std::vector<ClientKey> keys;
  DecoderParams decoder;
  std::vector<TriggerSet> triggers;  // one per client, ascending id
  std::optional<TriggerSet> unified;
  std::optional<EncoderReport> encoder_report;
};

/// Loads the cached encoder for (d, shape, epsilon, seed) or pre-trains and
/// caches it. A cache entry that exists but fails validation is an error.
PretrainedEncoder obtain_encoder(const RunConfig& config, int key_length, const Log& log);
std::filesystem::path encoder_cache_path(const RunConfig& config, int key_length);

/// With `build_triggers` false the encoder is not touched and the keys,
/// decoder and trigger sets are left for the caller to fill in.
Workspace prepare_workspace(const RunConfig& config, const Log& log, bool build_triggers = true);

struct RunSummary {
  double acc = 0;
  double baseline_acc = 0;
  double delta_acc = 0;
  double wsr = 0;      // mean own-trigger WSR over leakers
  double min_wsr = 0;
  double wsr_gap = 0;  // mean over leakers
  double tacc = 0;
  int collisions = 0;
  int leakers = 0;
  std::optional<double> unified_wsr;
};

struct RunResult {
  FederationState state;
  std::optional<FederationState> baseline;
  std::vector<int> leakers;
  std::vector<VerificationReport> reports;  // aligned with leakers
  RunSummary summary;
};

std::vector<int> choose_clients(int num_clients, int count, std::uint64_t seed, std::uint64_t tag);

/// Hooks that apply the configured watermark inside run_round.
RoundHooks watermark_hooks(const Workspace& ws, const std::vector<int>& leakers, const Log& log);

/// Trains the watermarked federation and, when configured, its paired
/// no-injection baseline with identical seeds.
RunResult run_experiment(const Workspace& ws, const Log& log);

VerificationReport verify_model(const Workspace& ws, const Model& suspect);

/// Run directory: manifest, CSVs, checkpoints, decoder, trigger archive.
void write_run(const std::filesystem::path& dir, const Workspace& ws, const RunResult& result);

std::string metrics_csv(const std::vector<RoundRecord>& history);
std::string summary_csv(const RunSummary& s);

/// What an offline verifier or attacker replays from a run directory.
struct StoredRun {
  RunConfig config;
  std::optional<DecoderParams> decoder;
  std::vector<TriggerSet> triggers;
  std::optional<TriggerSet> unified;
  std::map<int, Model> leaked;
  std::map<int, Model> baseline_leaked;
  Model global;
  std::optional<Model> baseline_global;
};

StoredRun load_run(const std::filesystem::path& dir);

struct VerifyOutcome {
  VerificationReport report;
  std::string verdict;
};

VerifyOutcome verify_suspect(const std::filesystem::path& run_dir, const std::filesystem::path& suspect, double sigma);

/// Runs the configured attack suite on the run's malicious clients and
/// writes attacks/<kind>.csv plus attacks/summary.csv under `out`.
struct AttackRow {
  std::string kind;
  double param = 0;
  int client = 0;
  std::string model = "duw";  // detect rows: duw | clean | planted
  // deltas are drops: value before the attack minus value after
  double acc = 0, delta_acc = 0, wsr = 0, delta_wsr = 0, wsr_gap = 0;
  double pooled_acc = 0;  // on the pooled test set of every class
  int predicted = -1;
  bool collision = false;
  double anomaly_index = 0;
  int suspect_class = -1;
  bool low_confidence = false;
};

struct AttackSummaryRow {
  std::string kind;
  double param = 0;
  std::string model = "duw";
  double acc = 0, delta_acc = 0, pooled_acc = 0, wsr = 0, min_wsr = 0, delta_wsr = 0, max_abs_delta_wsr = 0, tacc = 0;
  double anomaly_index = 0;
  int flagged = 0;
  int count = 0;
};

struct AttackReport {
  std::vector<AttackRow> rows;
  std::vector<AttackSummaryRow> summary;
};

/// `clean_global` hosts the planted-badnet positive control of the detect
/// attack: the paired baseline's global model when there is one.
AttackReport run_attacks(const Workspace& ws, const std::map<int, Model>& leaked,
                         const std::map<int, Model>* baseline_leaked, const Model& clean_global, const AttackSpec& spec,
                         const Log& log);
void write_attack_report(const std::filesystem::path& dir, const AttackReport& report);

/// Reads CSVs under the run directory and writes SVG figures plus a
/// markdown summary into <run>/report. Throws "missing-metrics".
std::vector<std::filesystem::path> write_report(const std::filesystem::path& run_dir);

}  // namespace duw

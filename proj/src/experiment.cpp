#include "duw/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "duw/checkpoint.hpp"
#include "duw/injection.hpp"
#include "duw/io.hpp"

namespace duw {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

Architecture make_arch(const RunConfig& c) {
  if (c.model.arch == "identity") return identity_features(c.data.shape, 10);
  return small_cnn(c.data.shape, c.model.latent, 10, c.model.batch_norm, c.model.conv1, c.model.conv2);
}

LabeledDataset single_dataset(const RunConfig& c, const std::string& domain, int train, int test, std::uint64_t tag) {
  return synthetic_digits(domain, train, test, c.data.shape, derive_seed(c.seed, {stream::data, tag}));
}

}  // namespace

fs::path encoder_cache_path(const RunConfig& c, int d) {
  char name[160];
  std::snprintf(name, sizeof name, "encoder-d%d-%dx%dx%d-eps%.5f-seed%llu-n%d-%s", d, c.data.shape.channels,
                c.data.shape.height, c.data.shape.width, double(c.encoder.epsilon),
                static_cast<unsigned long long>(c.encoder.seed), c.encoder.corpus_size, c.ood.domain.c_str());
  return fs::path(c.encoder.cache) / name;
}

PretrainedEncoder obtain_encoder(const RunConfig& c, int d, const Log& log) {
  const fs::path path = encoder_cache_path(c, d);
  if (fs::exists(path)) {
    say(log, "encoder cache hit: " + path.string());
    return load_encoder(path);
  }
  if (std::find(c.data.domains.begin(), c.data.domains.end(), c.ood.domain) != c.data.domains.end())
    fail("ood-leakage", "encoder corpus domain '" + c.ood.domain + "' is used for federated training");
  say(log, "pre-training encoder for d=" + std::to_string(d) + " -> " + path.string());
  const ImageSet corpus =
      render_digits(c.ood.domain, c.encoder.corpus_size, c.data.shape, derive_seed(c.encoder.seed, {stream::encoder}));
  EncoderTraining tr;
  tr.max_steps = c.encoder.max_steps;
  tr.lr = c.encoder.lr;
  PretrainedEncoder enc = pretrain_encoder(corpus, d, c.encoder.epsilon, c.encoder.seed, tr);
  say(log, "encoder probe bit accuracy " + fmt(enc.report.probe_bit_accuracy) + " after " +
               std::to_string(enc.report.steps) + " steps");
  save_encoder(path, enc);
  return enc;
}

Workspace prepare_workspace(const RunConfig& c, const Log& log, bool build_triggers) {
  c.validate();
  Workspace ws;
  ws.config = c;
  ws.arch = make_arch(c);
  const int K = c.partition.clients;
  const auto pseed = derive_seed(c.seed, {stream::partition});

  if (c.data.source == "idx") {
    ws.dataset.domain = "idx";
    ws.dataset.train = load_idx(c.data.train_images, c.data.train_labels, c.data.shape);
    ws.dataset.test = load_idx(c.data.test_images, c.data.test_labels, c.data.shape);
  } else if (c.data.source != "synthetic") {
    fail("config-error", "unknown data source '" + c.data.source + "'");
  }

  if (c.partition.kind == "domain") {
    require(c.data.source == "synthetic", "config-error", "domain partitioning needs synthetic domains");
    const int nd = static_cast<int>(c.data.domains.size());
    if (K % nd != 0) fail("config-error", "clients must be a multiple of the number of domains");
    const int cpd = K / nd;
    std::map<std::string, LabeledDataset> domains;
    for (int i = 0; i < nd; ++i) {
      const auto& name = c.data.domains[static_cast<std::size_t>(i)];
      domains[name] = single_dataset(c, name, c.data.train_per_client * cpd, c.data.test_count / nd, hash_string(name));
    }
    ws.clients = multi_domain_assign(domains, cpd, pseed);
    ws.dataset.domain = "multi";
    for (const auto& [name, d] : domains) {
      ws.dataset.train = ws.dataset.train.size() ? concat(ws.dataset.train, d.train) : d.train;
      ws.dataset.test = ws.dataset.test.size() ? concat(ws.dataset.test, d.test) : d.test;
    }
  } else {
    if (c.data.source == "synthetic") {
      for (const auto& name : c.data.domains) {
        const auto d = single_dataset(c, name, c.data.train_per_client * K / int(c.data.domains.size()),
                                      c.data.test_count / int(c.data.domains.size()), hash_string(name));
        ws.dataset.train = ws.dataset.train.size() ? concat(ws.dataset.train, d.train) : d.train;
        ws.dataset.test = ws.dataset.test.size() ? concat(ws.dataset.test, d.test) : d.test;
      }
      ws.dataset.domain = c.data.domains.size() == 1 ? c.data.domains[0] : "mixed";
    }
    if (c.partition.kind == "class")
      ws.clients = partition_by_class(ws.dataset, K, c.partition.classes_per_client, pseed);
    else if (c.partition.kind == "dirichlet")
      ws.clients = partition_dirichlet(ws.dataset, K, c.partition.alpha, pseed);
    else
      fail("config-error", "unknown partition kind '" + c.partition.kind + "'");
  }
  ws.validation = ws.dataset.test;

  OodRequest req;
  req.source = parse_ood_source(c.ood.source);
  req.size = c.ood.pool_size;
  req.shape = c.data.shape;
  req.held_out_domain = c.ood.domain;
  req.training_domains = c.data.domains;
  ws.pool = make_ood_pool(req, derive_seed(c.seed, {stream::ood}));

  const int d = c.key_length();
  ws.keys = make_keys(K, d);
  ws.decoder = init_decoder(d, ws.arch.latent_dim(), derive_seed(c.seed, {stream::decoder}));
  if (!build_triggers) return ws;

  const auto& mode = c.watermark.mode;
  // one shared sample draw: client trigger sets differ only through their keys or patches
  const auto tseed = derive_seed(c.seed, {stream::trigger});
  const bool needs_encoder = mode == "duw" || mode == "classifier" || mode == "none" || c.watermark.unified;
  std::optional<PretrainedEncoder> enc;
  if (needs_encoder) {
    enc = obtain_encoder(c, d, log);
    ws.encoder_report = enc->report;
  }
  for (int k = 0; k < K; ++k) {
    if (mode == "badnet-random-noise" || mode == "badnet-zero-one") {
      const auto kind = parse_badnet_kind(mode.substr(7));
      ws.triggers.push_back(badnet_trigger_set(ws.pool, k, kind, ws.arch.num_classes, c.watermark.trigger_size, tseed));
    } else {
      TriggerSet t = encode_trigger_set(ws.pool, ws.keys[static_cast<std::size_t>(k)], enc->encoder,
                                        c.watermark.trigger_size, tseed);
      if (mode == "classifier") t = to_classifier_space(std::move(t), ws.arch.num_classes);
      ws.triggers.push_back(std::move(t));
    }
  }
  if (c.watermark.unified) {
    ClientKey reserved{-1, std::vector<std::uint8_t>(static_cast<std::size_t>(d - 1), 0)};
    reserved.bits.push_back(1);
    TriggerSet u = encode_trigger_set(ws.pool, reserved, enc->encoder, c.watermark.unified_size,
                                      derive_seed(c.seed, {stream::trigger, 1}));
    u.space = TargetSpace::classifier;
    u.target = c.watermark.unified_target;
    ws.unified = std::move(u);
  }
  return ws;
}

std::vector<int> choose_clients(int num_clients, int count, std::uint64_t seed, std::uint64_t tag) {
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  if (count <= 0 || count >= num_clients) return ids;
  Rng rng = make_rng(seed, {stream::attack, tag});
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(count));
  std::sort(ids.begin(), ids.end());
  return ids;
}

VerificationReport verify_model(const Workspace& ws, const Model& suspect) {
  return track(suspect, ws.triggers, &ws.decoder, ws.config.watermark.sigma);
}

RoundHooks watermark_hooks(const Workspace& ws, const std::vector<int>& leakers, const Log& log) {
  RoundHooks hooks;
  const auto& c = ws.config;
  if (c.watermark.mode == "duw") {
    hooks.client = [&ws](const Model& g, int k, int) {
      return inject_duw(g, ws.triggers[static_cast<std::size_t>(k)], ws.decoder, ws.config.injection).model;
    };
  } else if (c.watermark.mode != "none") {
    hooks.client = [&ws](const Model& g, int k, int) {
      return inject_classifier(g, ws.triggers[static_cast<std::size_t>(k)], ws.config.injection).model;
    };
  }
  if (c.watermark.unified && ws.unified) {
    hooks.global = [&ws](const Model& g, int) {
      const auto& w = ws.config.watermark;
      return inject_unified(g, *ws.unified, w.unified_target, w.unified_steps, w.unified_lr);
    };
  }
  hooks.metrics = [&ws, leakers, log](const FederationState& s, RoundRecord& rec) {
    if (ws.triggers.empty()) return;
    std::vector<VerificationReport> reports;
    std::vector<int> truth;
    double own = 0;
    for (int k : leakers) {
      const auto it = s.leaked.find(k);
      if (it == s.leaked.end()) continue;
      reports.push_back(verify_model(ws, it->second));
      truth.push_back(k);
      own += reports.back().wsr[static_cast<std::size_t>(k)];
    }
    if (!reports.empty()) {
      rec.mean_wsr = own / double(reports.size());
      rec.tacc = tacc(reports, truth);
    }
    say(log, "round " + std::to_string(rec.round) + " acc " + fmt(rec.mean_acc) + " val " + fmt(rec.val_acc) +
                 " wsr " + fmt(rec.mean_wsr) + " tacc " + fmt(rec.tacc));
  };
  return hooks;
}

namespace {

FederationState train(const Workspace& ws, const RunConfig& c, const RoundHooks& hooks) {
  FederationState s = make_federation(ws.arch, ws.clients, ws.validation, c.seed);
  for (int r = 0; r < c.rounds; ++r) {
    try {
      run_round(s, c.round, hooks);
    } catch (const Error& e) {
      fail(e.code(), "round " + std::to_string(r) + ": " + e.what());
    }
  }
  return s;
}

}  // namespace

RunResult run_experiment(const Workspace& ws, const Log& log) {
  const auto& c = ws.config;
  RunResult result;
  result.leakers = choose_clients(c.partition.clients, c.watermark.leakers, c.seed, 100);

  say(log, "training '" + c.name + "' (" + c.watermark.mode + ", K=" + std::to_string(c.partition.clients) +
               ", d=" + std::to_string(c.key_length()) + ", rounds=" + std::to_string(c.rounds) + ")");
  result.state = train(ws, c, watermark_hooks(ws, result.leakers, log));

  if (c.watermark.baseline && c.watermark.mode != "none") {
    say(log, "training paired baseline without injection");
    RunConfig bc = c;
    bc.round.injection_enabled = false;
    RoundHooks quiet;
    result.baseline = train(ws, bc, quiet);
  }

  auto& s = result.summary;
  std::vector<int> truth;
  for (int k : result.leakers) {
    result.reports.push_back(verify_model(ws, result.state.leaked.at(k)));
    truth.push_back(k);
  }
  s.leakers = static_cast<int>(result.leakers.size());
  s.acc = mean_client_accuracy(result.state.global, ws.clients);
  if (result.baseline) {
    const auto m = accuracy_metrics(result.state.global, ws.clients, mean_client_accuracy(result.baseline->global, ws.clients));
    s.baseline_acc = m.acc + m.delta_acc;
    s.delta_acc = m.delta_acc;
  } else {
    s.baseline_acc = std::nan("");
    s.delta_acc = std::nan("");
  }
  s.min_wsr = 1.0;
  for (std::size_t i = 0; i < result.reports.size(); ++i) {
    const auto& r = result.reports[i];
    const double own = r.wsr[static_cast<std::size_t>(result.leakers[i])];
    s.wsr += own;
    s.min_wsr = std::min(s.min_wsr, own);
    s.wsr_gap += r.wsr_gap;
    s.collisions += r.collision;
  }
  if (s.leakers) {
    s.wsr /= s.leakers;
    s.wsr_gap /= s.leakers;
  }
  s.tacc = tacc(result.reports, truth);
  if (ws.unified) {
    double u = 0;
    for (int k : result.leakers) u += wsr(result.state.leaked.at(k), *ws.unified, nullptr);
    s.unified_wsr = s.leakers ? u / s.leakers : 0.0;
  }
  say(log, "summary acc " + fmt(s.acc) + " dAcc " + fmt(s.delta_acc) + " wsr " + fmt(s.wsr) + " gap " +
               fmt(s.wsr_gap) + " tacc " + fmt(s.tacc) + " collisions " + std::to_string(s.collisions));
  return result;
}

std::string metrics_csv(const std::vector<RoundRecord>& history) {
  std::string out = "round,mean_acc,val_acc,mean_wsr,tacc,wall_clock\n";
  for (const auto& r : history)
    out += std::to_string(r.round) + "," + fmt(r.mean_acc) + "," + fmt(r.val_acc) + "," + fmt(r.mean_wsr) + "," +
           fmt(r.tacc) + "," + fmt(r.wall_clock) + "\n";
  return out;
}

std::string summary_csv(const RunSummary& s) {
  return "Acc,dAcc,WSR,WSR_Gap,TAcc,min_WSR,collisions,leakers,baseline_Acc,unified_WSR\n" + fmt(s.acc) + "," +
         fmt(s.delta_acc) + "," + fmt(s.wsr) + "," + fmt(s.wsr_gap) + "," + fmt(s.tacc) + "," + fmt(s.min_wsr) + "," +
         std::to_string(s.collisions) + "," + std::to_string(s.leakers) + "," + fmt(s.baseline_acc) + "," +
         (s.unified_wsr ? fmt(*s.unified_wsr) : std::string("nan")) + "\n";
}

void write_run(const fs::path& dir, const Workspace& ws, const RunResult& r) {
  fs::create_directories(dir);
  const json config = to_json(ws.config);
  json leak_json = r.leakers;
  write_json(dir / "manifest.json", {{"config", config},
                                     {"seed", ws.config.seed},
                                     {"content_hash", hex64(hash_string(config.dump()))},
                                     {"key_length", ws.config.key_length()},
                                     {"leakers", leak_json},
                                     {"rounds_completed", r.state.round}});
  write_text(dir / "metrics.csv", metrics_csv(r.state.history));
  write_text(dir / "summary.csv", summary_csv(r.summary));
  write_json(dir / "partition.json", partition_manifest(ws.clients));
  save_model(dir / "global", r.state.global);
  for (const auto& [k, m] : r.state.delivered) save_model(dir / "clients" / std::to_string(k) / "delivered", m);
  for (const auto& [k, m] : r.state.leaked) save_model(dir / "clients" / std::to_string(k) / "leaked", m);
  if (r.baseline) {
    write_text(dir / "baseline" / "metrics.csv", metrics_csv(r.baseline->history));
    save_model(dir / "baseline" / "global", r.baseline->global);
    for (const auto& [k, m] : r.baseline->leaked)
      save_model(dir / "baseline" / "clients" / std::to_string(k) / "leaked", m);
  }
  save_decoder(dir / "server" / "decoder", ws.decoder);
  std::vector<TriggerSet> archive = ws.triggers;
  write_trigger_archive(dir / "triggers", archive);
  if (ws.unified) write_trigger_archive(dir / "triggers-unified", {*ws.unified});

  std::string verify = "client,predicted,own_wsr,wsr_gap,collision,ownership\n";
  for (std::size_t i = 0; i < r.reports.size(); ++i) {
    const auto& rep = r.reports[i];
    const int k = r.leakers[i];
    verify += std::to_string(k) + "," + std::to_string(rep.predicted_leaker) + "," +
              fmt(rep.wsr[static_cast<std::size_t>(k)]) + "," + fmt(rep.wsr_gap) + "," +
              std::to_string(int(rep.collision)) + "," + std::to_string(int(rep.ownership_established)) + "\n";
  }
  write_text(dir / "verification.csv", verify);
  if (ws.encoder_report) {
    const auto& e = *ws.encoder_report;
    write_json(dir / "encoder_report.json", {{"probe_bit_accuracy", e.probe_bit_accuracy},
                                             {"steps", e.steps},
                                             {"mean_key_distance", e.mean_key_distance},
                                             {"max_perturbation", e.max_perturbation}});
  }
}

StoredRun load_run(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) fail("missing-run", dir.string() + " is not a run directory");
  StoredRun s;
  const auto manifest = read_json(dir / "manifest.json");
  s.config = run_config_from_json(manifest.at("config"));
  if (fs::exists(dir / "server" / "decoder")) s.decoder = load_decoder(dir / "server" / "decoder");
  if (fs::exists(dir / "triggers")) s.triggers = read_trigger_archive(dir / "triggers");
  if (fs::exists(dir / "triggers-unified")) {
    auto u = read_trigger_archive(dir / "triggers-unified");
    if (!u.empty()) s.unified = std::move(u.front());
  }
  s.global = load_model(dir / "global");
  if (fs::exists(dir / "baseline" / "global")) s.baseline_global = load_model(dir / "baseline" / "global");
  if (fs::exists(dir / "clients"))
    for (const auto& entry : fs::directory_iterator(dir / "clients")) {
      const int k = std::stoi(entry.path().filename().string());
      if (fs::exists(entry.path() / "leaked")) s.leaked.emplace(k, load_model(entry.path() / "leaked"));
    }
  if (fs::exists(dir / "baseline" / "clients"))
    for (const auto& entry : fs::directory_iterator(dir / "baseline" / "clients")) {
      const int k = std::stoi(entry.path().filename().string());
      s.baseline_leaked.emplace(k, load_model(entry.path() / "leaked"));
    }
  return s;
}

VerifyOutcome verify_suspect(const fs::path& run_dir, const fs::path& suspect_path, double sigma) {
  const StoredRun run = load_run(run_dir);
  if (run.triggers.empty()) fail("missing-run", "run directory has no trigger archive");
  const Model suspect = load_model(suspect_path);
  VerifyOutcome out;
  out.report = track(suspect, run.triggers, run.decoder ? &*run.decoder : nullptr, sigma);
  const auto& r = out.report;
  std::ostringstream v;
  if (!r.ownership_established) {
    v << "no ownership: every WSR is at or below sigma=" << sigma;
  } else {
    v << "ownership established; predicted leaker " << r.predicted_leaker << " (WSR "
      << r.wsr[static_cast<std::size_t>(std::find(r.client_ids.begin(), r.client_ids.end(), r.predicted_leaker) -
                                        r.client_ids.begin())]
      << ", gap " << r.wsr_gap << ")";
    if (r.collision) v << "; collision between " << r.over_threshold.size() << " clients";
  }
  out.verdict = v.str();
  return out;
}

}  // namespace duw

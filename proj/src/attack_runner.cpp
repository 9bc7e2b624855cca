#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <tuple>

#include "duw/attacks.hpp"
#include "duw/experiment.hpp"
#include "duw/io.hpp"

namespace duw {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_param(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct Baseline {
  double acc;
  double wsr;
};

AttackRow measure(const Workspace& ws, const std::string& kind, double param, int k, const Model& attacked,
                  const Baseline& before) {
  AttackRow row;
  row.kind = kind;
  row.param = param;
  row.client = k;
  const auto& client = ws.clients[static_cast<std::size_t>(k)];
  row.acc = accuracy(attacked, Head::classifier, client.test.images, client.test.labels);
  row.delta_acc = before.acc - row.acc;
  row.pooled_acc = accuracy(attacked, Head::classifier, ws.validation.images, ws.validation.labels);
  const VerificationReport rep = verify_model(ws, attacked);
  row.wsr = rep.wsr[static_cast<std::size_t>(k)];
  row.delta_wsr = before.wsr - row.wsr;
  row.wsr_gap = rep.wsr_gap;
  row.predicted = rep.predicted_leaker;
  row.collision = rep.collision;
  return row;
}

// Images plus badnet-stamped copies relabeled to the patch's target class.
ImageSet poisoned_mix(const ImageSet& images, int client_id, int num_classes, std::uint64_t seed) {
  OodPool pool{images, "plant"};
  pool.images.labels.clear();
  const int n = std::max(1, images.size() / 5);
  const TriggerSet t = badnet_trigger_set(pool, client_id, BadnetKind::random_noise, num_classes, n, seed);
  ImageSet stamped = t.images;
  stamped.labels.assign(static_cast<std::size_t>(stamped.size()), t.target);
  return concat(images, stamped);
}

}  // namespace

AttackReport run_attacks(const Workspace& ws, const std::map<int, Model>& leaked,
                         const std::map<int, Model>* baseline_leaked, const Model& clean_global, const AttackSpec& spec,
                         const Log& log) {
  const auto& c = ws.config;
  AttackReport report;
  std::vector<int> malicious;
  for (int k : choose_clients(c.partition.clients, spec.malicious, c.seed, 200))
    if (leaked.count(k)) malicious.push_back(k);
  if (malicious.empty()) fail("missing-run", "no leaked models available for the malicious clients");

  std::map<int, Baseline> before;
  for (int k : malicious) {
    const Model& m = leaked.at(k);
    const auto& test = ws.clients[static_cast<std::size_t>(k)].test;
    before[k] = Baseline{accuracy(m, Head::classifier, test.images, test.labels),
                         verify_model(ws, m).wsr[static_cast<std::size_t>(k)]};
  }
  auto schedule = [&](int k, std::uint64_t tag) {
    return TrainSchedule{spec.epochs, spec.lr, spec.batch_size,
                         derive_seed(c.seed, {stream::attack, tag, static_cast<std::uint64_t>(k)})};
  };
  auto note = [&](const std::string& msg) {
    if (log) log(msg);
  };

  for (const auto& kind : spec.kinds) {
    if (kind == "finetune") {
      for (int k : malicious) {
        note("finetune client " + std::to_string(k));
        const Model m = finetune_attack(leaked.at(k), ws.clients[static_cast<std::size_t>(k)], schedule(k, 1));
        report.rows.push_back(measure(ws, kind, spec.epochs, k, m, before[k]));
      }
    } else if (kind == "prune") {
      for (double rate : spec.prune_rates)
        for (int k : malicious) {
          note("prune client " + std::to_string(k) + " rate " + fmt_param(rate));
          const Model m = prune_attack(leaked.at(k), ws.clients[static_cast<std::size_t>(k)], rate, schedule(k, 2));
          report.rows.push_back(measure(ws, kind, rate, k, m, before[k]));
        }
    } else if (kind == "extract") {
      // auxiliary images from their own seed stream, disjoint from every client's data
      const ImageSet aux =
          render_digits(spec.aux_domain, spec.aux_size, c.data.shape, derive_seed(c.seed, {stream::attack, 3}));
      for (int k : malicious) {
        note("extract client " + std::to_string(k));
        ExtractionConfig cfg;
        cfg.schedule = {spec.extract_epochs, spec.extract_lr, spec.batch_size,
                        derive_seed(c.seed, {stream::attack, 3, static_cast<std::uint64_t>(k)})};
        cfg.warm_start = spec.warm_start;
        const Model m = extraction_attack(leaked.at(k), aux, cfg);
        report.rows.push_back(measure(ws, kind, spec.extract_epochs, k, m, before[k]));
      }
    } else if (kind == "perturb") {
      for (double alpha : spec.alphas)
        for (int k : malicious) {
          const Model m =
              perturb_attack(leaked.at(k), alpha, derive_seed(c.seed, {stream::attack, 4, static_cast<std::uint64_t>(k)}));
          report.rows.push_back(measure(ws, kind, alpha, k, m, before[k]));
        }
    } else if (kind == "detect") {
      CleanseConfig cfg;
      cfg.steps = spec.cleanse_steps;
      cfg.lr = spec.cleanse_lr;
      cfg.lambda = spec.cleanse_lambda;
      // positive control: a badnet planted into a model that covers every class
      const std::vector<int> pooled_rows = [&] {
        Rng rng = make_rng(c.seed, {stream::attack, 8});
        std::vector<int> rows(static_cast<std::size_t>(ws.dataset.train.size()));
        std::iota(rows.begin(), rows.end(), 0);
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(std::min<std::size_t>(rows.size(), static_cast<std::size_t>(spec.plant_size)));
        return rows;
      }();
      const ImageSet pooled = ws.dataset.train.subset(pooled_rows);
      for (int k : malicious) {
        const auto& client = ws.clients[static_cast<std::size_t>(k)];
        cfg.seed = derive_seed(c.seed, {stream::attack, 5, static_cast<std::uint64_t>(k)});
        auto detect = [&](const std::string& label, const Model& m, const ImageSet& benign) {
          note("detect client " + std::to_string(k) + " (" + label + ")");
          const CleanseResult r = anomaly_index(m, benign, cfg);
          AttackRow row = measure(ws, "detect", 0, k, m, before[k]);
          row.model = label;
          row.anomaly_index = r.anomaly_index;
          row.suspect_class = r.suspect_class;
          row.low_confidence = r.low_confidence;
          report.rows.push_back(row);
        };
        detect("duw", leaked.at(k), client.train);
        if (baseline_leaked && baseline_leaked->count(k)) detect("clean", baseline_leaked->at(k), client.train);
        const TrainSchedule plant{spec.plant_epochs, spec.plant_lr, spec.batch_size,
                                  derive_seed(c.seed, {stream::attack, 6, static_cast<std::uint64_t>(k)})};
        const ImageSet mix =
            poisoned_mix(pooled, k, ws.arch.num_classes, derive_seed(c.seed, {stream::attack, 7}));
        detect("planted", train_epochs(clean_global, mix, plant), pooled);
      }
    } else {
      fail("config-error", "unknown attack kind '" + kind + "'");
    }
  }

  // aggregate rows sharing (kind, param, model), keeping first-seen order
  std::vector<std::tuple<std::string, double, std::string>> order;
  std::map<std::tuple<std::string, double, std::string>, AttackSummaryRow> groups;
  for (const auto& r : report.rows) {
    const auto key = std::make_tuple(r.kind, r.param, r.model);
    auto [it, fresh] = groups.try_emplace(key);
    auto& g = it->second;
    if (fresh) {
      order.push_back(key);
      g.kind = r.kind;
      g.param = r.param;
      g.model = r.model;
      g.min_wsr = 1.0;
    }
    g.acc += r.acc;
    g.delta_acc += r.delta_acc;
    g.pooled_acc += r.pooled_acc;
    g.wsr += r.wsr;
    g.min_wsr = std::min(g.min_wsr, r.wsr);
    g.delta_wsr += r.delta_wsr;
    g.max_abs_delta_wsr = std::max(g.max_abs_delta_wsr, std::abs(r.delta_wsr));
    g.tacc += r.predicted == r.client ? 1.0 : 0.0;
    g.anomaly_index += r.anomaly_index;
    g.flagged += r.anomaly_index > 2.0;
    ++g.count;
  }
  for (const auto& key : order) {
    auto g = groups.at(key);
    const double n = g.count;
    g.acc /= n;
    g.delta_acc /= n;
    g.pooled_acc /= n;
    g.wsr /= n;
    g.delta_wsr /= n;
    g.tacc /= n;
    g.anomaly_index /= n;
    report.summary.push_back(g);
  }
  return report;
}

void write_attack_report(const fs::path& dir, const AttackReport& report) {
  fs::create_directories(dir);
  std::map<std::string, std::string> per_kind;
  for (const auto& r : report.rows) {
    auto& out = per_kind[r.kind];
    if (out.empty())
      out = "kind,param,client,model,Acc,dAcc,pooled_Acc,WSR,dWSR,WSR_Gap,predicted,collision,anomaly_index,suspect_class,"
            "low_confidence\n";
    out += r.kind + "," + fmt_param(r.param) + "," + std::to_string(r.client) + "," + r.model + "," + fmt(r.acc) + "," +
           fmt(r.delta_acc) + "," + fmt(r.pooled_acc) + "," + fmt(r.wsr) + "," + fmt(r.delta_wsr) + "," + fmt(r.wsr_gap) + "," +
           std::to_string(r.predicted) + "," + std::to_string(int(r.collision)) + "," + fmt(r.anomaly_index) + "," +
           std::to_string(r.suspect_class) + "," + std::to_string(int(r.low_confidence)) + "\n";
  }
  for (const auto& [kind, text] : per_kind) write_text(dir / (kind + ".csv"), text);
  std::string summary = "kind,param,model,Acc,dAcc,pooled_Acc,WSR,min_WSR,dWSR,max_abs_dWSR,TAcc,anomaly_index,flagged,count\n";
  for (const auto& g : report.summary)
    summary += g.kind + "," + fmt_param(g.param) + "," + g.model + "," + fmt(g.acc) + "," + fmt(g.delta_acc) + "," +
               fmt(g.pooled_acc) + "," + fmt(g.wsr) + "," + fmt(g.min_wsr) + "," + fmt(g.delta_wsr) + "," + fmt(g.max_abs_delta_wsr) + "," +
               fmt(g.tacc) + "," + fmt(g.anomaly_index) + "," + std::to_string(g.flagged) + "," +
               std::to_string(g.count) + "\n";
  write_text(dir / "summary.csv", summary);
}

}  // namespace duw

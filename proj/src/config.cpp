#include "duw/config.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "duw/keying.hpp"

namespace duw {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// strips a trailing comment that is not inside a string
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

struct ValueParser {
  const std::string& s;
  std::size_t pos = 0;
  int line;

  [[noreturn]] void error(const std::string& what) const {
    fail("config-error", "line " + std::to_string(line) + ": " + what);
  }
  void skip() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  json value() {
    skip();
    if (pos >= s.size()) error("missing value");
    const char c = s[pos];
    if (c == '"') return string();
    if (c == '[') return array();
    return scalar();
  }
  json string() {
    std::string out;
    ++pos;
    while (pos < s.size() && s[pos] != '"') {
      if (s[pos] == '\\' && pos + 1 < s.size()) {
        const char e = s[++pos];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
      } else {
        out += s[pos];
      }
      ++pos;
    }
    if (pos >= s.size()) error("unterminated string");
    ++pos;
    return out;
  }
  json array() {
    json out = json::array();
    ++pos;
    skip();
    if (pos < s.size() && s[pos] == ']') {
      ++pos;
      return out;
    }
    while (true) {
      out.push_back(value());
      skip();
      if (pos >= s.size()) error("unterminated array");
      if (s[pos] == ',') {
        ++pos;
        skip();
        if (pos < s.size() && s[pos] == ']') {
          ++pos;
          return out;
        }
        continue;
      }
      if (s[pos] == ']') {
        ++pos;
        return out;
      }
      error("expected ',' or ']' in array");
    }
  }
  json scalar() {
    const auto start = pos;
    while (pos < s.size() && s[pos] != ',' && s[pos] != ']' && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    const std::string tok = s.substr(start, pos - start);
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string clean;
    for (char ch : tok)
      if (ch != '_') clean += ch;
    try {
      std::size_t used = 0;
      if (clean.find_first_of(".eE") == std::string::npos || clean.find_first_of("xX") != std::string::npos) {
        const long long v = std::stoll(clean, &used, 0);
        if (used == clean.size()) return v;
      } else {
        const double v = std::stod(clean, &used);
        if (used == clean.size()) return v;
      }
    } catch (const std::exception&) {
    }
    error("cannot parse value '" + tok + "'");
  }
};

json* descend(json& root, const std::string& dotted, int line) {
  json* node = &root;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    part = trim(part);
    if (part.empty()) fail("config-error", "line " + std::to_string(line) + ": empty key segment");
    json& next = (*node)[part];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) fail("config-error", "line " + std::to_string(line) + ": '" + part + "' is not a table");
    node = &next;
  }
  return node;
}

}  // namespace

json parse_toml(const std::string& text) {
  json root = json::object();
  json* table = &root;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string l = trim(strip_comment(raw));
    if (l.empty()) continue;
    if (l.front() == '[') {
      if (l.back() != ']') fail("config-error", "line " + std::to_string(line) + ": malformed table header");
      table = descend(root, l.substr(1, l.size() - 2), line);
      continue;
    }
    const auto eq = l.find('=');
    if (eq == std::string::npos) fail("config-error", "line " + std::to_string(line) + ": expected key = value");
    std::string key = trim(l.substr(0, eq));
    if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
    if (key.empty()) fail("config-error", "line " + std::to_string(line) + ": empty key");
    const std::string rest = l.substr(eq + 1);
    ValueParser p{rest, 0, line};
    json v = p.value();
    p.skip();
    if (p.pos != rest.size()) fail("config-error", "line " + std::to_string(line) + ": trailing characters");
    if (table->contains(key)) fail("config-error", "line " + std::to_string(line) + ": duplicate key '" + key + "'");
    (*table)[key] = std::move(v);
  }
  return root;
}

void merge_json(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [k, v] : patch.items()) {
    if (v.is_object() && base.contains(k) && base[k].is_object())
      merge_json(base[k], v);
    else
      base[k] = v;
  }
}

int RunConfig::key_length() const {
  if (watermark.key_length > 0) return watermark.key_length;
  return default_key_length(partition.clients + (watermark.unified ? 1 : 0));
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) fail("config-error", msg);
  };
  static const std::set<std::string> modes{"none", "duw", "classifier", "badnet-random-noise", "badnet-zero-one"};
  check(modes.count(watermark.mode) == 1, "unknown watermark mode '" + watermark.mode + "'");
  check(partition.clients >= 1, "need at least one client");
  check(rounds >= 1, "rounds must be >= 1");
  check(round.local_steps >= 1, "local_steps must be >= 1");
  check(round.injection_start_round >= 0 && round.injection_start_round <= rounds,
        "start_round must lie in [0, rounds]");
  check(injection.steps >= 1, "injection steps must be >= 1");
  check(key_length() >= partition.clients + (watermark.unified ? 1 : 0),
        "key length must cover every client" + std::string(watermark.unified ? " plus the unified key" : ""));
  check(watermark.trigger_size >= 1 && watermark.trigger_size <= ood.pool_size, "trigger size must fit the OoD pool");
  check(!watermark.unified || watermark.unified_size <= ood.pool_size, "unified trigger size must fit the OoD pool");
  check(watermark.sigma >= 0 && watermark.sigma <= 1, "sigma must lie in [0, 1]");
  check(data.shape.height >= 4 && data.shape.width >= 4, "images must be at least 4x4");
  check(model.arch == "small_cnn" || model.arch == "identity", "unknown model arch '" + model.arch + "'");
  check(model.arch != "small_cnn" || (data.shape.height % 4 == 0 && data.shape.width % 4 == 0),
        "small_cnn needs image sides divisible by 4");
}

namespace {

template <typename T>
void take(const json& section, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    fail("config-error", std::string("bad value for '") + key + "'");
  }
}

void check_keys(const json& section, const std::string& name, std::initializer_list<const char*> known) {
  if (!section.is_object()) fail("config-error", "'" + name + "' must be a table");
  for (const auto& [k, v] : section.items()) {
    bool ok = false;
    for (const char* kk : known) ok = ok || k == kk;
    if (!ok) fail("config-error", "unknown key '" + name + "." + k + "'");
  }
}

const json& section(const json& j, const char* name) {
  static const json empty = json::object();
  return j.contains(name) ? j.at(name) : empty;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  check_keys(j, "config",
             {"name", "desk_runnable", "seed", "data", "partition", "model", "federation", "injection", "watermark",
              "ood", "encoder", "attack"});
  take(j, "name", c.name);
  take(j, "desk_runnable", c.desk_runnable);
  take(j, "seed", c.seed);

  const auto& d = section(j, "data");
  check_keys(d, "data",
             {"source", "domains", "train_per_client", "test_count", "shape", "train_images", "train_labels",
              "test_images", "test_labels"});
  take(d, "source", c.data.source);
  take(d, "domains", c.data.domains);
  take(d, "train_per_client", c.data.train_per_client);
  take(d, "test_count", c.data.test_count);
  if (d.contains("shape")) {
    std::vector<int> s;
    take(d, "shape", s);
    if (s.size() != 3) fail("config-error", "data.shape must be [channels, height, width]");
    c.data.shape = {s[0], s[1], s[2]};
  }
  take(d, "train_images", c.data.train_images);
  take(d, "train_labels", c.data.train_labels);
  take(d, "test_images", c.data.test_images);
  take(d, "test_labels", c.data.test_labels);

  const auto& p = section(j, "partition");
  check_keys(p, "partition", {"kind", "clients", "classes_per_client", "alpha"});
  take(p, "kind", c.partition.kind);
  take(p, "clients", c.partition.clients);
  take(p, "classes_per_client", c.partition.classes_per_client);
  take(p, "alpha", c.partition.alpha);

  const auto& m = section(j, "model");
  check_keys(m, "model", {"arch", "latent", "batch_norm", "conv1", "conv2"});
  take(m, "arch", c.model.arch);
  take(m, "latent", c.model.latent);
  take(m, "batch_norm", c.model.batch_norm);
  take(m, "conv1", c.model.conv1);
  take(m, "conv2", c.model.conv2);

  const auto& f = section(j, "federation");
  check_keys(f, "federation", {"rounds", "active_fraction", "local_steps", "local_lr", "batch_size", "start_round"});
  take(f, "rounds", c.rounds);
  take(f, "active_fraction", c.round.active_fraction);
  take(f, "local_steps", c.round.local_steps);
  take(f, "local_lr", c.round.local_lr);
  take(f, "batch_size", c.round.batch_size);
  c.round.injection_start_round = 5;
  take(f, "start_round", c.round.injection_start_round);

  const auto& i = section(j, "injection");
  check_keys(i, "injection", {"steps", "lr", "beta", "batch_size"});
  take(i, "steps", c.injection.steps);
  take(i, "lr", c.injection.lr);
  take(i, "beta", c.injection.beta);
  take(i, "batch_size", c.injection.batch_size);

  const auto& w = section(j, "watermark");
  check_keys(w, "watermark",
             {"mode", "key_length", "trigger_size", "sigma", "leakers", "baseline", "unified", "unified_steps",
              "unified_lr", "unified_target", "unified_size"});
  take(w, "mode", c.watermark.mode);
  take(w, "key_length", c.watermark.key_length);
  take(w, "trigger_size", c.watermark.trigger_size);
  take(w, "sigma", c.watermark.sigma);
  take(w, "leakers", c.watermark.leakers);
  take(w, "baseline", c.watermark.baseline);
  take(w, "unified", c.watermark.unified);
  take(w, "unified_steps", c.watermark.unified_steps);
  take(w, "unified_lr", c.watermark.unified_lr);
  take(w, "unified_target", c.watermark.unified_target);
  take(w, "unified_size", c.watermark.unified_size);
  c.round.injection_enabled = c.watermark.mode != "none";

  const auto& o = section(j, "ood");
  check_keys(o, "ood", {"source", "domain", "pool_size"});
  take(o, "source", c.ood.source);
  take(o, "domain", c.ood.domain);
  take(o, "pool_size", c.ood.pool_size);

  const auto& e = section(j, "encoder");
  check_keys(e, "encoder", {"epsilon", "corpus_size", "seed", "max_steps", "lr", "cache"});
  take(e, "epsilon", c.encoder.epsilon);
  take(e, "corpus_size", c.encoder.corpus_size);
  take(e, "seed", c.encoder.seed);
  take(e, "max_steps", c.encoder.max_steps);
  take(e, "lr", c.encoder.lr);
  take(e, "cache", c.encoder.cache);

  const auto& a = section(j, "attack");
  check_keys(a, "attack",
             {"kinds", "malicious", "epochs", "lr", "batch_size", "prune_rates", "alphas", "aux_domain", "aux_size",
              "extract_epochs", "extract_lr", "warm_start", "cleanse_steps", "cleanse_lr", "cleanse_lambda",
              "plant_epochs", "plant_lr", "plant_size"});
  take(a, "kinds", c.attack.kinds);
  take(a, "malicious", c.attack.malicious);
  take(a, "epochs", c.attack.epochs);
  take(a, "lr", c.attack.lr);
  take(a, "batch_size", c.attack.batch_size);
  take(a, "prune_rates", c.attack.prune_rates);
  take(a, "alphas", c.attack.alphas);
  take(a, "aux_domain", c.attack.aux_domain);
  take(a, "aux_size", c.attack.aux_size);
  take(a, "extract_epochs", c.attack.extract_epochs);
  take(a, "extract_lr", c.attack.extract_lr);
  take(a, "warm_start", c.attack.warm_start);
  take(a, "cleanse_steps", c.attack.cleanse_steps);
  take(a, "cleanse_lr", c.attack.cleanse_lr);
  take(a, "cleanse_lambda", c.attack.cleanse_lambda);
  take(a, "plant_epochs", c.attack.plant_epochs);
  take(a, "plant_lr", c.attack.plant_lr);
  take(a, "plant_size", c.attack.plant_size);

  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  return {{"name", c.name},
          {"desk_runnable", c.desk_runnable},
          {"seed", c.seed},
          {"data",
           {{"source", c.data.source},
            {"domains", c.data.domains},
            {"train_per_client", c.data.train_per_client},
            {"test_count", c.data.test_count},
            {"shape", {c.data.shape.channels, c.data.shape.height, c.data.shape.width}},
            {"train_images", c.data.train_images},
            {"train_labels", c.data.train_labels},
            {"test_images", c.data.test_images},
            {"test_labels", c.data.test_labels}}},
          {"partition",
           {{"kind", c.partition.kind},
            {"clients", c.partition.clients},
            {"classes_per_client", c.partition.classes_per_client},
            {"alpha", c.partition.alpha}}},
          {"model",
           {{"arch", c.model.arch},
            {"latent", c.model.latent},
            {"batch_norm", c.model.batch_norm},
            {"conv1", c.model.conv1},
            {"conv2", c.model.conv2}}},
          {"federation",
           {{"rounds", c.rounds},
            {"active_fraction", c.round.active_fraction},
            {"local_steps", c.round.local_steps},
            {"local_lr", c.round.local_lr},
            {"batch_size", c.round.batch_size},
            {"start_round", c.round.injection_start_round}}},
          {"injection",
           {{"steps", c.injection.steps},
            {"lr", c.injection.lr},
            {"beta", c.injection.beta},
            {"batch_size", c.injection.batch_size}}},
          {"watermark",
           {{"mode", c.watermark.mode},
            {"key_length", c.watermark.key_length},
            {"trigger_size", c.watermark.trigger_size},
            {"sigma", c.watermark.sigma},
            {"leakers", c.watermark.leakers},
            {"baseline", c.watermark.baseline},
            {"unified", c.watermark.unified},
            {"unified_steps", c.watermark.unified_steps},
            {"unified_lr", c.watermark.unified_lr},
            {"unified_target", c.watermark.unified_target},
            {"unified_size", c.watermark.unified_size}}},
          {"ood", {{"source", c.ood.source}, {"domain", c.ood.domain}, {"pool_size", c.ood.pool_size}}},
          {"encoder",
           {{"epsilon", c.encoder.epsilon},
            {"corpus_size", c.encoder.corpus_size},
            {"seed", c.encoder.seed},
            {"max_steps", c.encoder.max_steps},
            {"lr", c.encoder.lr},
            {"cache", c.encoder.cache}}},
          {"attack",
           {{"kinds", c.attack.kinds},
            {"malicious", c.attack.malicious},
            {"epochs", c.attack.epochs},
            {"lr", c.attack.lr},
            {"batch_size", c.attack.batch_size},
            {"prune_rates", c.attack.prune_rates},
            {"alphas", c.attack.alphas},
            {"aux_domain", c.attack.aux_domain},
            {"aux_size", c.attack.aux_size},
            {"extract_epochs", c.attack.extract_epochs},
            {"extract_lr", c.attack.extract_lr},
            {"warm_start", c.attack.warm_start},
            {"cleanse_steps", c.attack.cleanse_steps},
            {"cleanse_lr", c.attack.cleanse_lr},
            {"cleanse_lambda", c.attack.cleanse_lambda},
            {"plant_epochs", c.attack.plant_epochs},
            {"plant_lr", c.attack.plant_lr},
            {"plant_size", c.attack.plant_size}}}};
}

RunConfig load_run_config(const std::optional<std::string>& preset, const std::optional<std::string>& path,
                          std::optional<std::uint64_t> seed) {
  json j = json::object();
  if (preset) j = preset_json(*preset);
  if (path) {
    std::ifstream in(*path);
    if (!in) fail("config-error", "cannot read config file " + *path);
    std::stringstream ss;
    ss << in.rdbuf();
    merge_json(j, parse_toml(ss.str()));
  }
  if (seed) j["seed"] = *seed;
  return run_config_from_json(j);
}

}  // namespace duw

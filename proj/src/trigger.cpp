#include "duw/trigger.hpp"

#include <algorithm>
#include <numeric>

#include "duw/io.hpp"
#include "duw/optim.hpp"
#include "duw/rng.hpp"

namespace duw {

namespace fs = std::filesystem;

constexpr const ParamSet<float>* no_state = nullptr;

Stack EncoderParams::body_stack() const {
  const ImageShape in{shape.channels + 1, shape.height, shape.width};
  return {in,
          {{LayerKind::conv3x3, hidden},
           {LayerKind::relu},
           {LayerKind::conv3x3, hidden},
           {LayerKind::relu},
           {LayerKind::conv3x3, shape.channels}}};
}

EncoderParams init_encoder(const ImageShape& shape, int key_length, float epsilon, std::uint64_t seed, int hidden) {
  require(key_length >= 1, "invalid-argument", "key length must be positive");
  require(epsilon >= 0, "invalid-argument", "epsilon budget must be non-negative");
  EncoderParams e;
  e.shape = shape;
  e.key_length = key_length;
  e.epsilon = epsilon;
  e.hidden = hidden;
  Rng rng = make_rng(seed, {stream::encoder, 0});
  e.body = init_params<float>(e.body_stack(), rng);
  // orthogonal key codes (when the plane is large enough) scaled to unit
  // per-pixel variance
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(shape.plane(), key_length);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  Eigen::MatrixXd q = a;
  if (shape.plane() >= key_length) {
    q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() * Eigen::MatrixXd::Identity(shape.plane(), key_length);
    q *= std::sqrt(double(shape.plane()) / key_length);
  } else {
    q /= std::sqrt(double(key_length));
  }
  Tensor<float> w({shape.plane(), key_length});
  w.matrix() = q.cast<float>();
  e.key_projection["weight"] = std::move(w);
  e.key_projection["bias"] = Tensor<float>({shape.plane()});
  return e;
}

namespace {

struct EncoderTape {
  Tape<float> body;
  RowMatrix<float> keys;       // signed keys (n, d)
  RowMatrix<float> residual;   // r = tanh(body + plane)
  RowMatrix<float> unclamped;  // x + eps * r
};

constexpr int encoder_format = 2;

RowMatrix<float> signed_keys(const RowMatrix<float>& bits, Index n, int d) {
  if (bits.cols() != d)
    fail("key-encoder-mismatch", "encoder trained for d=" + std::to_string(d) + ", key has " +
                                     std::to_string(bits.cols()) + " bits");
  if (bits.rows() != 1 && bits.rows() != n) fail("input-shape", "need one key row or one per image");
  RowMatrix<float> k(n, d);
  for (Index i = 0; i < n; ++i) k.row(i) = bits.row(bits.rows() == 1 ? 0 : i).array() * 2.f - 1.f;
  return k;
}

RowMatrix<float> encode_impl(const EncoderParams& e, const RowMatrix<float>& images, const RowMatrix<float>& keys,
                             EncoderTape* tape) {
  const ImageShape& s = e.shape;
  if (images.cols() != s.size())
    fail("input-shape", "encoder expects " + to_string(s) + " images, got " + std::to_string(images.cols()) + " values");
  const Index n = images.rows();
  RowMatrix<float> k = signed_keys(keys, n, e.key_length);
  RowMatrix<float> plane = k * e.key_projection.at("weight").matrix().transpose();
  plane.rowwise() += e.key_projection.at("bias").values.transpose();

  RowMatrix<float> stacked(n, Index{s.size()} + s.plane());
  stacked.leftCols(s.size()) = images;
  stacked.rightCols(s.plane()) = plane;
  const Stack body = e.body_stack();
  RowMatrix<float> r = to_rows(forward(body, e.body, no_state, to_activation(stacked, body.input), Mode::train,
                                        tape ? &tape->body : nullptr));
  for (int c = 0; c < s.channels; ++c) r.middleCols(c * s.plane(), s.plane()) += plane;
  r = r.array().tanh();
  RowMatrix<float> out = images + e.epsilon * r;
  if (tape) {
    tape->keys = std::move(k);
    tape->residual = std::move(r);
    tape->unclamped = out;
  }
  return out.cwiseMax(0.f).cwiseMin(1.f);
}

// Gradients of the encoder parameters given d loss / d output.
void encode_backward(const EncoderParams& e, const EncoderTape& tape, const RowMatrix<float>& dout,
                     ParamSet<float>& body_grads, ParamSet<float>& key_grads) {
  const ImageShape& s = e.shape;
  const Stack body = e.body_stack();
  const auto inside = ((tape.unclamped.array() > 0.f) && (tape.unclamped.array() < 1.f)).cast<float>();
  RowMatrix<float> dpre = e.epsilon * dout.array() * inside * (1.f - tape.residual.array().square());
  auto dx = to_rows(backward(body, e.body, tape.body, to_activation(dpre, s), &body_grads, true));
  RowMatrix<float> dplane = dx.rightCols(s.plane());
  for (int c = 0; c < s.channels; ++c) dplane += dpre.middleCols(c * s.plane(), s.plane());
  Tensor<float> gw({s.plane(), e.key_length}), gb({s.plane()});
  gw.matrix().noalias() = dplane.transpose() * tape.keys;
  gb.values = dplane.colwise().sum().transpose();
  key_grads["weight"] = std::move(gw);
  key_grads["bias"] = std::move(gb);
}

Stack probe_stack(const ImageShape& shape, int d) {
  return {shape,
          {{LayerKind::conv3x3, 16},
           {LayerKind::relu},
           {LayerKind::max_pool2},
           {LayerKind::conv3x3, 32},
           {LayerKind::relu},
           {LayerKind::max_pool2},
           {LayerKind::flatten},
           {LayerKind::linear, d}}};
}

RowMatrix<float> random_bits(Index n, int d, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  RowMatrix<float> b(n, d);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = coin(rng) ? 1.f : 0.f;
  return b;
}

double bit_accuracy(const RowMatrix<float>& logits, const RowMatrix<float>& bits) {
  // logits (d, n), bits (n, d)
  return ((logits.transpose().array() > 0.f).cast<float>() == bits.array()).cast<double>().mean();
}

}  // namespace

RowMatrix<float> encode(const EncoderParams& encoder, const RowMatrix<float>& images, const RowMatrix<float>& keys) {
  RowMatrix<float> out(images.rows(), images.cols());
  constexpr Index chunk = 256;
  for (Index start = 0; start < images.rows(); start += chunk) {
    const Index n = std::min(chunk, images.rows() - start);
    RowMatrix<float> k = keys.rows() == 1 ? keys : RowMatrix<float>(keys.middleRows(start, n));
    out.middleRows(start, n) = encode_impl(encoder, images.middleRows(start, n), k, nullptr);
  }
  return out;
}

PretrainedEncoder pretrain_encoder(const ImageSet& corpus, int key_length, float epsilon, std::uint64_t seed,
                                   const EncoderTraining& training) {
  require(key_length >= 1, "invalid-argument", "key length must be positive");
  require(corpus.size() >= 10, "insufficient-data", "encoder corpus needs at least 10 images");
  PretrainedEncoder result{init_encoder(corpus.shape, key_length, epsilon, seed), {}};
  EncoderParams& enc = result.encoder;

  Rng rng = make_rng(seed, {stream::encoder, 1});
  std::vector<int> order(static_cast<std::size_t>(corpus.size()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int held = std::max(1, static_cast<int>(std::lround(training.holdout_fraction * corpus.size())));
  const std::vector<int> held_rows(order.begin(), order.begin() + held);
  const std::vector<int> train_rows(order.begin() + held, order.end());
  const RowMatrix<float> held_images = corpus.subset(held_rows).images;

  // fixed evaluation keys: 16 random keys cycled over the held-out images
  Rng eval_rng = make_rng(seed, {stream::encoder, 2});
  const RowMatrix<float> eval_pool = random_bits(16, key_length, eval_rng);
  RowMatrix<float> eval_keys(held, key_length);
  for (int i = 0; i < held; ++i) eval_keys.row(i) = eval_pool.row(i % 16);

  const Stack probe = probe_stack(corpus.shape, key_length);
  Rng probe_rng = make_rng(seed, {stream::encoder, 3});
  ParamSet<float> probe_params = init_params<float>(probe, probe_rng);
  Adam<float> enc_opt(training.lr), key_opt(training.lr), probe_opt(training.lr);

  auto evaluate = [&] {
    RowMatrix<float> x = encode(enc, held_images, eval_keys);
    auto logits = forward(probe, probe_params, no_state, to_activation(x, probe.input), Mode::eval).data;
    return bit_accuracy(logits, eval_keys);
  };

  std::uniform_int_distribution<std::size_t> pick(0, train_rows.size() - 1);
  double acc = 0;
  int step = 0;
  while (step < training.max_steps) {
    std::vector<int> rows(static_cast<std::size_t>(training.batch_size));
    for (auto& r : rows) r = train_rows[pick(rng)];
    const RowMatrix<float> x = corpus.subset(rows).images;
    const RowMatrix<float> bits = random_bits(training.batch_size, key_length, rng);

    EncoderTape etape;
    RowMatrix<float> y = encode_impl(enc, x, bits, &etape);
    Tape<float> ptape;
    auto logits = forward(probe, probe_params, no_state, to_activation(y, probe.input), Mode::train, &ptape);
    // sigmoid BCE, mean over bits and samples
    const float scale = 1.f / float(logits.data.size());
    logits.data = ((1.f + (-logits.data.array()).exp()).inverse() - bits.transpose().array()) * scale;
    ParamSet<float> probe_grads, body_grads, key_grads;
    auto dy = to_rows(backward(probe, probe_params, ptape, std::move(logits), &probe_grads, true));
    if (epsilon > 0) {
      encode_backward(enc, etape, dy, body_grads, key_grads);
      enc_opt.step(enc.body, body_grads);
      key_opt.step(enc.key_projection, key_grads);
    }
    probe_opt.step(probe_params, probe_grads);
    ++step;

    if (step % training.eval_every == 0 || step == training.max_steps) {
      acc = evaluate();
      result.report.history.emplace_back(step, acc);
      if (acc >= training.target_bit_accuracy) break;
    }
  }
  result.report.probe_bit_accuracy = acc;
  result.report.steps = step;

  if (!(acc >= training.target_bit_accuracy))
    fail("encoder-underfit", "held-out probe bit accuracy " + std::to_string(acc) + " < " +
                                 std::to_string(training.target_bit_accuracy) + " after " + std::to_string(step) +
                                 " steps (epsilon=" + std::to_string(epsilon) + ", d=" + std::to_string(key_length) +
                                 ")");

  Rng key_rng = make_rng(seed, {stream::encoder, 4});
  RowMatrix<float> k1 = random_bits(held, key_length, key_rng);
  RowMatrix<float> k2 = k1;
  for (int i = 0; i < held; ++i) k2(i, i % key_length) = 1.f - k2(i, i % key_length);
  const RowMatrix<float> e1 = encode(enc, held_images, k1), e2 = encode(enc, held_images, k2);
  result.report.mean_key_distance = (e1 - e2).cwiseAbs().mean();
  result.report.max_perturbation = (e1 - held_images).cwiseAbs().maxCoeff();
  return result;
}

void save_encoder(const fs::path& dir, const PretrainedEncoder& p) {
  const auto& e = p.encoder;
  ParamSet<float> all;
  for (const auto& [n, t] : e.body) all["body/" + n] = t;
  for (const auto& [n, t] : e.key_projection) all["key/" + n] = t;
  save_params(dir / "params", all);
  nlohmann::json history = nlohmann::json::array();
  for (auto [s, a] : p.report.history) history.push_back({s, a});
  write_json(dir / "encoder.json", {{"format", encoder_format},
                                    {"shape", {e.shape.channels, e.shape.height, e.shape.width}},
                                    {"key_length", e.key_length},
                                    {"epsilon", e.epsilon},
                                    {"hidden", e.hidden},
                                    {"probe_bit_accuracy", p.report.probe_bit_accuracy},
                                    {"steps", p.report.steps},
                                    {"mean_key_distance", p.report.mean_key_distance},
                                    {"max_perturbation", p.report.max_perturbation},
                                    {"history", history}});
}

PretrainedEncoder load_encoder(const fs::path& dir) {
  const auto meta = read_json(dir / "encoder.json");
  PretrainedEncoder p;
  auto& e = p.encoder;
  try {
    require(meta.value("format", 0) == encoder_format, "cache-invalid", "encoder written by an incompatible version");
    const auto shape = meta.at("shape").get<std::vector<int>>();
    require(shape.size() == 3, "cache-invalid", "bad encoder shape");
    e.shape = {shape[0], shape[1], shape[2]};
    e.key_length = meta.at("key_length").get<int>();
    e.epsilon = meta.at("epsilon").get<float>();
    e.hidden = meta.at("hidden").get<int>();
    p.report.probe_bit_accuracy = meta.at("probe_bit_accuracy").get<double>();
    p.report.steps = meta.at("steps").get<int>();
    p.report.mean_key_distance = meta.at("mean_key_distance").get<double>();
    p.report.max_perturbation = meta.at("max_perturbation").get<double>();
    for (const auto& h : meta.at("history")) p.report.history.emplace_back(h.at(0).get<int>(), h.at(1).get<double>());
  } catch (const nlohmann::json::exception& ex) {
    fail("cache-invalid", std::string("encoder metadata: ") + ex.what());
  }
  for (auto& [n, t] : load_params(dir / "params")) {
    if (n.rfind("body/", 0) == 0)
      e.body[n.substr(5)] = std::move(t);
    else if (n.rfind("key/", 0) == 0)
      e.key_projection[n.substr(4)] = std::move(t);
  }
  // shape check against a fresh initialization
  const auto fresh = init_encoder(e.shape, e.key_length, e.epsilon, 0, e.hidden);
  try {
    check_compatible(fresh.body, e.body);
    check_compatible(fresh.key_projection, e.key_projection);
  } catch (const Error&) {
    fail("cache-invalid", "encoder parameters do not match their metadata");
  }
  return p;
}

namespace {

std::vector<int> sample_rows(int pool_size, int size, std::uint64_t seed) {
  if (size < 1 || size > pool_size)
    fail("invalid-argument", "trigger size " + std::to_string(size) + " outside [1, " + std::to_string(pool_size) + "]");
  Rng rng = make_rng(seed, {stream::trigger});
  std::vector<int> rows(static_cast<std::size_t>(pool_size));
  std::iota(rows.begin(), rows.end(), 0);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(static_cast<std::size_t>(size));
  return rows;
}

}  // namespace

TriggerSet encode_trigger_set(const OodPool& pool, const ClientKey& key, const EncoderParams& encoder, int size,
                              std::uint64_t seed) {
  if (key.length() != encoder.key_length)
    fail("key-encoder-mismatch", "key length " + std::to_string(key.length()) + " vs encoder d=" +
                                     std::to_string(encoder.key_length));
  require(pool.images.shape == encoder.shape, "input-shape", "pool and encoder image shapes differ");
  TriggerSet t;
  t.client_id = key.client_id;
  t.images = pool.images.subset(sample_rows(pool.images.size(), size, seed));
  t.images.labels.clear();
  RowMatrix<float> k(1, key.length());
  for (int j = 0; j < key.length(); ++j) k(0, j) = key.bits[static_cast<std::size_t>(j)];
  t.images.images = encode(encoder, t.images.images, k);
  t.key = key.bits;
  t.target = key.hot_index();
  t.space = TargetSpace::decoder;
  t.source_tag = pool.source_tag;
  t.seed = seed;
  return t;
}

TriggerSet to_classifier_space(TriggerSet set, int num_classes) {
  require(num_classes >= 1, "invalid-argument", "num_classes must be positive");
  set.target = set.client_id % num_classes;
  set.space = TargetSpace::classifier;
  return set;
}

BadnetKind parse_badnet_kind(const std::string& name) {
  if (name == "random-noise") return BadnetKind::random_noise;
  if (name == "zero-one") return BadnetKind::zero_one;
  fail("invalid-argument", "unknown badnet trigger kind '" + name + "'");
}

RowMatrix<float> badnet_patch(int client_id, BadnetKind kind, std::uint64_t seed) {
  Rng rng = make_rng(seed, {stream::trigger, 1, static_cast<std::uint64_t>(client_id)});
  RowMatrix<float> patch(4, 4);
  if (kind == BadnetKind::random_noise) {
    std::uniform_real_distribution<float> u(0.f, 1.f);
    for (Index i = 0; i < 16; ++i) patch.data()[i] = u(rng);
  } else {
    std::vector<float> v(16, 1.f);
    std::fill(v.begin(), v.begin() + 5, 0.f);
    std::shuffle(v.begin(), v.end(), rng);
    for (Index i = 0; i < 16; ++i) patch.data()[i] = v[static_cast<std::size_t>(i)];
  }
  return patch;
}

TriggerSet badnet_trigger_set(const OodPool& pool, int client_id, BadnetKind kind, int num_classes, int size,
                              std::uint64_t seed) {
  const ImageShape& s = pool.images.shape;
  require(s.height >= 4 && s.width >= 4, "invalid-argument", "4x4 patch does not fit the image");
  require(num_classes >= 1, "invalid-argument", "num_classes must be positive");
  const RowMatrix<float> patch = badnet_patch(client_id, kind, seed);
  TriggerSet t;
  t.client_id = client_id;
  t.images = pool.images.subset(sample_rows(pool.images.size(), size, seed));
  t.images.labels.clear();
  for (Index i = 0; i < t.images.images.rows(); ++i)
    for (int c = 0; c < s.channels; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
          t.images.images(i, Index{c} * s.plane() + (s.height - 4 + y) * s.width + (s.width - 4 + x)) = patch(y, x);
  t.target = client_id % num_classes;
  t.space = TargetSpace::classifier;
  t.source_tag = pool.source_tag + "+badnet-" + (kind == BadnetKind::random_noise ? "random-noise" : "zero-one");
  t.seed = seed;
  return t;
}

void write_trigger_archive(const fs::path& dir, const std::vector<TriggerSet>& sets) {
  fs::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& t : sets) {
    const std::string file = "client_" + std::to_string(t.client_id) + ".f32";
    write_floats(dir / file, t.images.images.data(), static_cast<std::size_t>(t.images.images.size()));
    const auto& s = t.images.shape;
    index.push_back({{"client_id", t.client_id},
                     {"file", file},
                     {"count", t.size()},
                     {"shape", {s.channels, s.height, s.width}},
                     {"key", t.key},
                     {"target", t.target},
                     {"space", t.space == TargetSpace::decoder ? "decoder" : "classifier"},
                     {"source_tag", t.source_tag},
                     {"seed", t.seed},
                     {"pool_ids", t.images.ids}});
  }
  write_json(dir / "index.json", index);
}

std::vector<TriggerSet> read_trigger_archive(const fs::path& dir) {
  const auto index = read_json(dir / "index.json");
  std::vector<TriggerSet> sets;
  try {
    for (const auto& e : index) {
      TriggerSet t;
      t.client_id = e.at("client_id").get<int>();
      const auto shape = e.at("shape").get<std::vector<int>>();
      require(shape.size() == 3, "cache-invalid", "bad trigger shape");
      t.images.shape = {shape[0], shape[1], shape[2]};
      const int count = e.at("count").get<int>();
      t.images.images.resize(count, t.images.shape.size());
      read_floats(dir / e.at("file").get<std::string>(), t.images.images.data(),
                  static_cast<std::size_t>(t.images.images.size()));
      t.images.ids = e.at("pool_ids").get<std::vector<int>>();
      t.key = e.at("key").get<std::vector<std::uint8_t>>();
      t.target = e.at("target").get<int>();
      t.space = e.at("space").get<std::string>() == "decoder" ? TargetSpace::decoder : TargetSpace::classifier;
      t.source_tag = e.at("source_tag").get<std::string>();
      t.seed = e.at("seed").get<std::uint64_t>();
      sets.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& ex) {
    fail("cache-invalid", std::string("trigger index: ") + ex.what());
  }
  return sets;
}

}  // namespace duw

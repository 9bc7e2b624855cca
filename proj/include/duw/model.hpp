#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "duw/layers.hpp"
#include "duw/rng.hpp"
#include "duw/tensor.hpp"

namespace duw {

enum class Head { classifier, decoder };

inline const char* head_name(Head h) { return h == Head::classifier ? "classifier" : "decoder"; }

/// Feature-extractor layout plus the classification geometry around it.
struct Architecture {
  std::string id;
  ImageShape input;
  std::vector<LayerSpec> feature_layers;
  int num_classes = 10;

  Stack feature_stack() const { return {input, feature_layers}; }
  int latent_dim() const;
  bool operator==(const Architecture&) const = default;
};

/// conv-[bn]-relu-pool x2, then linear-relu into the latent space.
Architecture small_cnn(const ImageShape& input, int latent_dim, int num_classes, bool batch_norm = false,
                       int conv1_channels = 8, int conv2_channels = 16);

/// f = flatten; latent space is the raw pixel vector.
Architecture identity_features(const ImageShape& input, int num_classes);

/// theta_f, theta_h and an optional frozen decoder theta_D. Heads are
/// {"weight": (outputs, latent), "bias": (outputs)}.
template <typename Scalar>
struct ModelBundle {
  Architecture arch;
  ParamSet<Scalar> feature;
  ParamSet<Scalar> feature_state;  // batch-norm running statistics
  ParamSet<Scalar> classifier;
  std::optional<ParamSet<Scalar>> decoder;
  Head head = Head::classifier;
  std::uint64_t seed = 0;

  int latent_dim() const { return arch.latent_dim(); }
};

using Model = ModelBundle<float>;

template <typename Scalar>
ParamSet<Scalar> make_head(int outputs, int latent_dim, Rng& rng) {
  Tensor<Scalar> w({outputs, latent_dim});
  Tensor<Scalar> b({outputs});
  std::uniform_real_distribution<double> u(-1.0 / std::sqrt(double(latent_dim)), 1.0 / std::sqrt(double(latent_dim)));
  for (Index i = 0; i < w.size(); ++i) w.values[i] = static_cast<Scalar>(u(rng));
  for (Index i = 0; i < b.size(); ++i) b.values[i] = static_cast<Scalar>(u(rng));
  ParamSet<Scalar> head;
  head["weight"] = std::move(w);
  head["bias"] = std::move(b);
  return head;
}

template <typename Scalar>
ModelBundle<Scalar> make_model(const Architecture& arch, std::uint64_t seed) {
  Rng rng = make_rng(seed, {stream::model_init});
  ModelBundle<Scalar> m;
  m.arch = arch;
  m.feature = init_params<Scalar>(arch.feature_stack(), rng);
  m.feature_state = init_state<Scalar>(arch.feature_stack());
  m.classifier = make_head<Scalar>(arch.num_classes, arch.latent_dim(), rng);
  m.seed = seed;
  return m;
}

template <typename Scalar>
ModelBundle<Scalar> cast_model(const ModelBundle<float>& m) {
  ModelBundle<Scalar> out;
  out.arch = m.arch;
  out.feature = cast_params<Scalar>(m.feature);
  out.feature_state = cast_params<Scalar>(m.feature_state);
  out.classifier = cast_params<Scalar>(m.classifier);
  if (m.decoder) out.decoder = cast_params<Scalar>(*m.decoder);
  out.head = m.head;
  out.seed = m.seed;
  return out;
}

template <typename Scalar>
const ParamSet<Scalar>& head_params(const ModelBundle<Scalar>& m, Head head) {
  if (head == Head::classifier) return m.classifier;
  require(m.decoder.has_value(), "decoder-not-attached", "model has no decoder head");
  return *m.decoder;
}

template <typename Scalar>
int head_outputs(const ModelBundle<Scalar>& m, Head head) {
  return static_cast<int>(head_params(m, head).at("weight").rows());
}

/// Changes forward dispatch only; parameters are carried over untouched.
template <typename Scalar>
ModelBundle<Scalar> swap_head(ModelBundle<Scalar> m, Head to) {
  if (to == Head::decoder) require(m.decoder.has_value(), "head-unavailable", "no decoder attached to swap to");
  m.head = to;
  return m;
}

/// Latent features (latent, n) for a batch of images (n, C*H*W).
template <typename Scalar>
RowMatrix<Scalar> features(const ModelBundle<Scalar>& m, const RowMatrix<Scalar>& images) {
  const Stack stack = m.arch.feature_stack();
  return forward(stack, m.feature, &m.feature_state, to_activation(images, m.arch.input), Mode::eval).data;
}

/// Inference-mode logits (n, outputs) through the requested head.
template <typename Scalar>
RowMatrix<Scalar> forward(const ModelBundle<Scalar>& m, Head head, const RowMatrix<Scalar>& images) {
  const auto& h = head_params(m, head);
  if (images.cols() != m.arch.input.size())
    fail("input-shape", "model expects " + to_string(m.arch.input) + " images, got " +
                            std::to_string(images.cols()) + " values");
  const auto& w = h.at("weight");
  require(w.cols() == m.latent_dim(), "architecture-mismatch", "head input dimension differs from latent dimension");
  constexpr Index chunk = 512;
  RowMatrix<Scalar> logits(images.rows(), w.rows());
  for (Index start = 0; start < images.rows(); start += chunk) {
    const Index n = std::min(chunk, images.rows() - start);
    RowMatrix<Scalar> z = features(m, RowMatrix<Scalar>(images.middleRows(start, n)));
    RowMatrix<Scalar> out = w.matrix() * z;
    out.colwise() += h.at("bias").values;
    logits.middleRows(start, n) = out.transpose();
  }
  return logits;
}

template <typename Scalar>
RowMatrix<Scalar> forward(const ModelBundle<Scalar>& m, const RowMatrix<Scalar>& images) {
  return forward(m, m.head, images);
}

template <typename Derived>
std::vector<int> argmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

template <typename Scalar>
std::vector<int> predict(const ModelBundle<Scalar>& m, Head head, const RowMatrix<Scalar>& images) {
  return argmax_rows(forward(m, head, images));
}

/// Fraction of rows whose argmax equals the label; 0 for an empty set.
template <typename Scalar>
double accuracy(const ModelBundle<Scalar>& m, Head head, const RowMatrix<Scalar>& images, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const auto pred = predict(m, head, images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return double(hits) / double(labels.size());
}

template <typename Scalar>
struct Gradient {
  Scalar loss = 0;
  ParamSet<Scalar> feature;
  ParamSet<Scalar> head;
  ParamSet<Scalar> state;    // running statistics after a train-mode pass
  RowMatrix<Scalar> input;   // d loss / d images, when requested
  RowMatrix<Scalar> logits;  // (n, outputs)
};

/// Mean softmax cross-entropy: returns the loss and its gradient in-place
/// of `logits` (outputs, n).
template <typename Scalar>
Scalar softmax_cross_entropy(RowMatrix<Scalar>& logits, std::span<const int> targets) {
  const Index n = logits.cols();
  Scalar loss = 0;
  for (Index j = 0; j < n; ++j) {
    auto col = logits.col(j);
    const Scalar mx = col.maxCoeff();
    col.array() = (col.array() - mx).exp();
    const Scalar sum = col.sum();
    col /= sum;
    const int t = targets[static_cast<std::size_t>(j)];
    require(t >= 0 && t < logits.rows(), "input-shape", "target index out of range");
    loss -= std::log(std::max(col(t), std::numeric_limits<Scalar>::min()));
    col(t) -= 1;
  }
  logits /= Scalar(n);
  return loss / Scalar(n);
}

/// Cross-entropy of the chosen head against integer targets, with gradients
/// for theta_f and the head (and optionally the input images).
template <typename Scalar>
Gradient<Scalar> cross_entropy_gradient(const ModelBundle<Scalar>& m, Head head, const RowMatrix<Scalar>& images,
                                        std::span<const int> targets, Mode mode, bool want_input_grad = false) {
  require(images.rows() >= 1 && static_cast<std::size_t>(images.rows()) == targets.size(), "input-shape",
          "batch needs at least one image and one target per image");
  const auto& h = head_params(m, head);
  const Stack stack = m.arch.feature_stack();
  Tape<Scalar> tape;
  Gradient<Scalar> g;
  Activation<Scalar> z = forward(stack, m.feature, &m.feature_state, to_activation(images, m.arch.input), mode, &tape,
                                 mode == Mode::train ? &g.state : nullptr);
  const auto& w = h.at("weight");
  RowMatrix<Scalar> dlogits = w.matrix() * z.data;
  dlogits.colwise() += h.at("bias").values;
  g.logits = dlogits.transpose();
  g.loss = softmax_cross_entropy(dlogits, targets);

  Tensor<Scalar> gw(w.shape), gb({static_cast<int>(w.rows())});
  gw.matrix().noalias() = dlogits * z.data.transpose();
  gb.values = dlogits.rowwise().sum();
  g.head["weight"] = std::move(gw);
  g.head["bias"] = std::move(gb);

  Activation<Scalar> dz{z.batch, z.shape, w.matrix().transpose() * dlogits};
  Activation<Scalar> dx = backward(stack, m.feature, tape, std::move(dz), &g.feature, want_input_grad);
  if (want_input_grad) g.input = to_rows(dx);
  if (mode != Mode::train) g.state = m.feature_state;
  return g;
}

/// params - lr * grads. Non-finite gradients abort with the group name.
template <typename Scalar>
ParamSet<Scalar> sgd_step(const ParamSet<Scalar>& params, const ParamSet<Scalar>& grads, Scalar lr,
                          const std::string& group = "parameters") {
  require(lr >= 0, "invalid-argument", "learning rate must be non-negative");
  check_compatible(params, grads);
  for (const auto& [name, g] : grads)
    require(g.values.allFinite(), "numerical-divergence", "non-finite gradient in " + group + " tensor '" + name + "'");
  if (lr == 0) return params;
  return axpy(params, -lr, grads);
}

}  // namespace duw

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "duw/error.hpp"
#include "duw/rng.hpp"
#include "duw/tensor.hpp"

namespace duw {

enum class LayerKind { conv3x3, batch_norm, relu, tanh, max_pool2, flatten, linear };

struct LayerSpec {
  LayerKind kind;
  int out = 0;  // conv3x3 output channels, linear output features

  bool operator==(const LayerSpec&) const = default;
};

const char* layer_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

enum class Mode { train, eval };

/// Batch activations. Channel c of sample s at pixel p lives at
/// data(c, s * plane + p); dense activations are (features, batch).
template <typename Scalar>
struct Activation {
  int batch = 0;
  ImageShape shape;
  RowMatrix<Scalar> data;
};

/// Images stored one sample per row, (n, C*H*W), into channel-major activations.
template <typename Scalar>
Activation<Scalar> to_activation(const RowMatrix<Scalar>& images, const ImageShape& shape) {
  if (images.cols() != shape.size())
    fail("input-shape", "expected " + std::to_string(shape.size()) + " values per image, got " +
                            std::to_string(images.cols()));
  const int n = static_cast<int>(images.rows());
  const int plane = shape.plane();
  Activation<Scalar> a{n, shape, RowMatrix<Scalar>(shape.channels, Index{n} * plane)};
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < shape.channels; ++c)
      a.data.row(c).segment(Index{s} * plane, plane) = images.row(s).segment(Index{c} * plane, plane);
  return a;
}

template <typename Scalar>
RowMatrix<Scalar> to_rows(const Activation<Scalar>& a) {
  const int plane = a.shape.plane();
  RowMatrix<Scalar> out(a.batch, a.shape.size());
  for (int s = 0; s < a.batch; ++s)
    for (int c = 0; c < a.shape.channels; ++c)
      out.row(s).segment(Index{c} * plane, plane) = a.data.row(c).segment(Index{s} * plane, plane);
  return out;
}

/// A feed-forward stack of layers with its input geometry.
struct Stack {
  ImageShape input;
  std::vector<LayerSpec> layers;

  /// shapes()[i] is the input shape of layer i; the last entry is the output.
  std::vector<ImageShape> shapes() const;
  ImageShape output() const { return shapes().back(); }
  bool has_batch_norm() const;
  bool operator==(const Stack&) const = default;
};

inline std::string param_name(std::size_t layer, const char* field) {
  return std::to_string(layer) + "." + field;
}

template <typename Scalar>
ParamSet<Scalar> init_params(const Stack& stack, Rng& rng) {
  ParamSet<Scalar> params;
  const auto shapes = stack.shapes();
  auto uniform_fill = [&rng](Tensor<Scalar>& t, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index i = 0; i < t.size(); ++i) t.values[i] = static_cast<Scalar>(u(rng));
  };
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    const auto& layer = stack.layers[i];
    const auto& in = shapes[i];
    switch (layer.kind) {
      case LayerKind::conv3x3: {
        Tensor<Scalar> w({layer.out, in.channels, 3, 3});
        Tensor<Scalar> b({layer.out});
        const double bound = 1.0 / std::sqrt(9.0 * in.channels);
        uniform_fill(w, bound);
        uniform_fill(b, bound);
        params[param_name(i, "weight")] = std::move(w);
        params[param_name(i, "bias")] = std::move(b);
        break;
      }
      case LayerKind::linear: {
        Tensor<Scalar> w({layer.out, in.size()});
        Tensor<Scalar> b({layer.out});
        const double bound = 1.0 / std::sqrt(static_cast<double>(in.size()));
        uniform_fill(w, bound);
        uniform_fill(b, bound);
        params[param_name(i, "weight")] = std::move(w);
        params[param_name(i, "bias")] = std::move(b);
        break;
      }
      case LayerKind::batch_norm: {
        Tensor<Scalar> gamma({in.channels});
        gamma.values.setOnes();
        params[param_name(i, "gamma")] = std::move(gamma);
        params[param_name(i, "beta")] = Tensor<Scalar>({in.channels});
        break;
      }
      default:
        break;
    }
  }
  return params;
}

/// Batch-norm running statistics; empty for stacks without normalization.
template <typename Scalar>
ParamSet<Scalar> init_state(const Stack& stack) {
  ParamSet<Scalar> state;
  const auto shapes = stack.shapes();
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    if (stack.layers[i].kind != LayerKind::batch_norm) continue;
    Tensor<Scalar> var({shapes[i].channels});
    var.values.setOnes();
    state[param_name(i, "running_mean")] = Tensor<Scalar>({shapes[i].channels});
    state[param_name(i, "running_var")] = std::move(var);
  }
  return state;
}

template <typename Scalar>
struct LayerCache {
  RowMatrix<Scalar> saved;  // conv: im2col columns, linear: input, batch_norm: normalized input, relu/tanh: output
  Vector<Scalar> inv_std;
  std::vector<Index> argmax;
};

template <typename Scalar>
struct Tape {
  Mode mode = Mode::eval;
  std::vector<LayerCache<Scalar>> caches;
};

inline constexpr double batch_norm_eps = 1e-5;
inline constexpr double batch_norm_momentum = 0.1;

namespace detail {

template <typename Scalar>
RowMatrix<Scalar> im2col(const Activation<Scalar>& x) {
  const int C = x.shape.channels, H = x.shape.height, W = x.shape.width;
  const Index plane = x.shape.plane();
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(Index{C} * 9, Index{x.batch} * plane);
  for (int c = 0; c < C; ++c) {
    const Scalar* src = x.data.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        Scalar* dst = cols.row(Index{c} * 9 + ky * 3 + kx).data();
        for (int s = 0; s < x.batch; ++s) {
          const Index base = Index{s} * plane;
          for (int y = 0; y < H; ++y) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= H) continue;
            const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
            for (int xc = x0; xc < x1; ++xc) dst[base + y * W + xc] = src[base + yy * W + xc + kx - 1];
          }
        }
      }
  }
  return cols;
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, Activation<Scalar>& dx) {
  const int C = dx.shape.channels, H = dx.shape.height, W = dx.shape.width;
  const Index plane = dx.shape.plane();
  for (int c = 0; c < C; ++c) {
    Scalar* dst = dx.data.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Scalar* src = cols.row(Index{c} * 9 + ky * 3 + kx).data();
        for (int s = 0; s < dx.batch; ++s) {
          const Index base = Index{s} * plane;
          for (int y = 0; y < H; ++y) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= H) continue;
            const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
            for (int xc = x0; xc < x1; ++xc) dst[base + yy * W + xc + kx - 1] += src[base + y * W + xc];
          }
        }
      }
  }
}

}  // namespace detail

/// Runs the stack. In train mode batch-norm layers normalize with batch
/// statistics and, when `new_state` is given, write updated running
/// statistics into it; in eval mode they read `state`.
template <typename Scalar>
Activation<Scalar> forward(const Stack& stack, const ParamSet<Scalar>& params, const ParamSet<Scalar>* state,
                           Activation<Scalar> x, Mode mode, Tape<Scalar>* tape = nullptr,
                           ParamSet<Scalar>* new_state = nullptr) {
  if (!(x.shape == stack.input))
    fail("input-shape", "stack expects " + to_string(stack.input) + ", got " + to_string(x.shape));
  if (tape) {
    tape->mode = mode;
    tape->caches.assign(stack.layers.size(), {});
  }
  if (new_state && state) *new_state = *state;

  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    const auto& layer = stack.layers[i];
    LayerCache<Scalar>* cache = tape ? &tape->caches[i] : nullptr;
    switch (layer.kind) {
      case LayerKind::conv3x3: {
        const auto& w = params.at(param_name(i, "weight"));
        const auto& b = params.at(param_name(i, "bias"));
        RowMatrix<Scalar> cols = detail::im2col(x);
        RowMatrix<Scalar> out = w.matrix() * cols;
        out.colwise() += b.values;
        if (cache) cache->saved = std::move(cols);
        x.data = std::move(out);
        x.shape.channels = layer.out;
        break;
      }
      case LayerKind::linear: {
        require(x.shape.plane() == 1, "input-shape", "linear layer needs flattened input");
        const auto& w = params.at(param_name(i, "weight"));
        const auto& b = params.at(param_name(i, "bias"));
        RowMatrix<Scalar> out = w.matrix() * x.data;
        out.colwise() += b.values;
        if (cache) cache->saved = std::move(x.data);
        x.data = std::move(out);
        x.shape = {layer.out, 1, 1};
        break;
      }
      case LayerKind::batch_norm: {
        const auto& gamma = params.at(param_name(i, "gamma")).values;
        const auto& beta = params.at(param_name(i, "beta")).values;
        const Index m = x.data.cols();
        Vector<Scalar> mean, inv_std;
        if (mode == Mode::train) {
          mean = x.data.rowwise().mean();
          x.data.colwise() -= mean;
          Vector<Scalar> var = x.data.array().square().rowwise().mean();
          inv_std = (var.array() + Scalar(batch_norm_eps)).rsqrt();
          if (new_state) {
            const Scalar mom = Scalar(batch_norm_momentum);
            const Scalar unbias = m > 1 ? Scalar(m) / Scalar(m - 1) : Scalar(1);
            auto& rm = (*new_state)[param_name(i, "running_mean")].values;
            auto& rv = (*new_state)[param_name(i, "running_var")].values;
            rm = (1 - mom) * rm + mom * mean;
            rv = (1 - mom) * rv + mom * unbias * var;
          }
        } else {
          require(state != nullptr, "input-shape", "batch-norm in eval mode needs running statistics");
          mean = state->at(param_name(i, "running_mean")).values;
          inv_std = (state->at(param_name(i, "running_var")).values.array() + Scalar(batch_norm_eps)).rsqrt();
          x.data.colwise() -= mean;
        }
        x.data = inv_std.asDiagonal() * x.data;
        if (cache) {
          cache->saved = x.data;
          cache->inv_std = inv_std;
        }
        x.data = gamma.asDiagonal() * x.data;
        x.data.colwise() += beta;
        break;
      }
      case LayerKind::relu:
        x.data = x.data.cwiseMax(Scalar(0));
        if (cache) cache->saved = x.data;
        break;
      case LayerKind::tanh:
        x.data = x.data.array().tanh();
        if (cache) cache->saved = x.data;
        break;
      case LayerKind::max_pool2: {
        const int H = x.shape.height, W = x.shape.width, OH = H / 2, OW = W / 2;
        const Index plane = x.shape.plane(), oplane = Index{OH} * OW;
        RowMatrix<Scalar> out(x.shape.channels, Index{x.batch} * oplane);
        if (cache) cache->argmax.resize(static_cast<std::size_t>(out.size()));
        for (int c = 0; c < x.shape.channels; ++c) {
          const Scalar* src = x.data.row(c).data();
          for (int s = 0; s < x.batch; ++s)
            for (int oy = 0; oy < OH; ++oy)
              for (int ox = 0; ox < OW; ++ox) {
                Index best = Index{s} * plane + (2 * oy) * W + 2 * ox;
                for (Index cand : {best + 1, best + W, best + W + 1})
                  if (src[cand] > src[best]) best = cand;
                const Index o = Index{s} * oplane + oy * OW + ox;
                out(c, o) = src[best];
                if (cache) cache->argmax[static_cast<std::size_t>(c * out.cols() + o)] = best;
              }
        }
        x.data = std::move(out);
        x.shape.height = OH;
        x.shape.width = OW;
        break;
      }
      case LayerKind::flatten: {
        const Index plane = x.shape.plane();
        RowMatrix<Scalar> out(x.shape.size(), x.batch);
        for (int c = 0; c < x.shape.channels; ++c)
          for (int s = 0; s < x.batch; ++s)
            out.block(Index{c} * plane, s, plane, 1) = x.data.row(c).segment(Index{s} * plane, plane).transpose();
        x.data = std::move(out);
        x.shape = {x.shape.size(), 1, 1};
        break;
      }
    }
  }
  return x;
}

/// Back-propagates `grad` (shaped like the stack output) through a taped
/// forward pass. Parameter gradients are written into `grads` when given;
/// the returned activation is the gradient with respect to the stack input.
template <typename Scalar>
Activation<Scalar> backward(const Stack& stack, const ParamSet<Scalar>& params, const Tape<Scalar>& tape,
                            Activation<Scalar> grad, ParamSet<Scalar>* grads, bool need_input_grad = true) {
  const auto shapes = stack.shapes();
  for (std::size_t li = stack.layers.size(); li-- > 0;) {
    const auto& layer = stack.layers[li];
    const auto& cache = tape.caches[li];
    const ImageShape in_shape = shapes[li];
    const bool last = li == 0 && !need_input_grad;
    switch (layer.kind) {
      case LayerKind::conv3x3: {
        const auto& w = params.at(param_name(li, "weight"));
        if (grads) {
          Tensor<Scalar> gw(w.shape);
          gw.matrix().noalias() = grad.data * cache.saved.transpose();
          Tensor<Scalar> gb({layer.out});
          gb.values = grad.data.rowwise().sum();
          (*grads)[param_name(li, "weight")] = std::move(gw);
          (*grads)[param_name(li, "bias")] = std::move(gb);
        }
        if (last) return {};
        RowMatrix<Scalar> dcols = w.matrix().transpose() * grad.data;
        Activation<Scalar> dx{grad.batch, in_shape, RowMatrix<Scalar>::Zero(in_shape.channels, grad.data.cols())};
        detail::col2im(dcols, dx);
        grad = std::move(dx);
        break;
      }
      case LayerKind::linear: {
        const auto& w = params.at(param_name(li, "weight"));
        if (grads) {
          Tensor<Scalar> gw(w.shape);
          gw.matrix().noalias() = grad.data * cache.saved.transpose();
          Tensor<Scalar> gb({layer.out});
          gb.values = grad.data.rowwise().sum();
          (*grads)[param_name(li, "weight")] = std::move(gw);
          (*grads)[param_name(li, "bias")] = std::move(gb);
        }
        if (last) return {};
        grad.data = w.matrix().transpose() * grad.data;
        grad.shape = in_shape;
        break;
      }
      case LayerKind::batch_norm: {
        const auto& gamma = params.at(param_name(li, "gamma")).values;
        const auto& xhat = cache.saved;
        if (grads) {
          Tensor<Scalar> gg({in_shape.channels}), gb({in_shape.channels});
          gg.values = grad.data.cwiseProduct(xhat).rowwise().sum();
          gb.values = grad.data.rowwise().sum();
          (*grads)[param_name(li, "gamma")] = std::move(gg);
          (*grads)[param_name(li, "beta")] = std::move(gb);
        }
        if (last) return {};
        RowMatrix<Scalar> dxhat = gamma.asDiagonal() * grad.data;
        if (tape.mode == Mode::train) {
          const Scalar m = Scalar(dxhat.cols());
          Vector<Scalar> sum1 = dxhat.rowwise().sum();
          Vector<Scalar> sum2 = dxhat.cwiseProduct(xhat).rowwise().sum();
          RowMatrix<Scalar> t = m * dxhat;
          t.colwise() -= sum1;
          t -= sum2.asDiagonal() * xhat;
          grad.data = (cache.inv_std / m).asDiagonal() * t;
        } else {
          grad.data = cache.inv_std.asDiagonal() * dxhat;
        }
        break;
      }
      case LayerKind::relu:
        if (last) return {};
        grad.data = grad.data.cwiseProduct((cache.saved.array() > Scalar(0)).template cast<Scalar>().matrix());
        break;
      case LayerKind::tanh:
        if (last) return {};
        grad.data = grad.data.cwiseProduct((Scalar(1) - cache.saved.array().square()).matrix());
        break;
      case LayerKind::max_pool2: {
        if (last) return {};
        RowMatrix<Scalar> dx = RowMatrix<Scalar>::Zero(in_shape.channels, Index{grad.batch} * in_shape.plane());
        const Index ocols = grad.data.cols();
        for (int c = 0; c < in_shape.channels; ++c)
          for (Index o = 0; o < ocols; ++o)
            dx(c, cache.argmax[static_cast<std::size_t>(c * ocols + o)]) += grad.data(c, o);
        grad.data = std::move(dx);
        grad.shape = in_shape;
        break;
      }
      case LayerKind::flatten: {
        if (last) return {};
        const Index plane = in_shape.plane();
        RowMatrix<Scalar> dx(in_shape.channels, Index{grad.batch} * plane);
        for (int c = 0; c < in_shape.channels; ++c)
          for (int s = 0; s < grad.batch; ++s)
            dx.row(c).segment(Index{s} * plane, plane) = grad.data.block(Index{c} * plane, s, plane, 1).transpose();
        grad.data = std::move(dx);
        grad.shape = in_shape;
        break;
      }
    }
  }
  return grad;
}

}  // namespace duw

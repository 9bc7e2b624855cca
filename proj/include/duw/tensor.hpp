#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "duw/error.hpp"

namespace duw {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

/// Per-sample image geometry (channels, height, width).
struct ImageShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  int plane() const { return height * width; }
  int size() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

inline std::string to_string(const ImageShape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Row-major dense tensor stored flat. Weight matrices of shape
/// (out, in, ...) map directly onto an (out x in*...) row-major matrix.
template <typename Scalar>
struct Tensor {
  std::vector<int> shape;
  Vector<Scalar> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), values(Vector<Scalar>::Zero(count(shape))) {}

  static Index count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), Index{1}, [](Index a, int b) { return a * b; });
  }
  Index size() const { return values.size(); }
  Index rows() const { return shape.empty() ? 1 : shape.front(); }
  Index cols() const { return shape.empty() ? 1 : size() / rows(); }

  Eigen::Map<RowMatrix<Scalar>> matrix() { return {values.data(), rows(), cols()}; }
  Eigen::Map<const RowMatrix<Scalar>> matrix() const { return {values.data(), rows(), cols()}; }
};

/// Named parameter tensors keyed by canonical path ("0.weight", "weight", ...).
template <typename Scalar>
using ParamSet = std::map<std::string, Tensor<Scalar>>;

template <typename To, typename From>
ParamSet<To> cast_params(const ParamSet<From>& in) {
  ParamSet<To> out;
  for (const auto& [name, t] : in) out[name] = Tensor<To>{t.shape, t.values.template cast<To>()};
  return out;
}

template <typename Scalar>
ParamSet<Scalar> zeros_like(const ParamSet<Scalar>& p) {
  ParamSet<Scalar> out;
  for (const auto& [name, t] : p) out[name] = Tensor<Scalar>(t.shape);
  return out;
}

template <typename Scalar>
Index parameter_count(const ParamSet<Scalar>& p) {
  Index n = 0;
  for (const auto& [name, t] : p) n += t.size();
  return n;
}

template <typename Scalar>
void check_compatible(const ParamSet<Scalar>& a, const ParamSet<Scalar>& b) {
  require(a.size() == b.size(), "incompatible-parameters", "parameter collections have different tensor counts");
  auto ib = b.begin();
  for (const auto& [name, t] : a) {
    require(name == ib->first, "incompatible-parameters", "tensor '" + name + "' missing from other collection");
    require(t.shape == ib->second.shape, "incompatible-parameters", "shape mismatch for '" + name + "'");
    ++ib;
  }
}

template <typename Scalar>
Scalar squared_distance(const ParamSet<Scalar>& a, const ParamSet<Scalar>& b) {
  check_compatible(a, b);
  Scalar total = 0;
  for (const auto& [name, t] : a) total += (t.values - b.at(name).values).squaredNorm();
  return total;
}

/// Euclidean norm of the difference over the concatenation of all tensors.
template <typename Scalar>
Scalar param_distance(const ParamSet<Scalar>& a, const ParamSet<Scalar>& b) {
  return std::sqrt(squared_distance(a, b));
}

template <typename Scalar>
bool all_finite(const ParamSet<Scalar>& p) {
  for (const auto& [name, t] : p)
    if (!t.values.allFinite()) return false;
  return true;
}

/// a + scale * b, tensor by tensor.
template <typename Scalar>
ParamSet<Scalar> axpy(const ParamSet<Scalar>& a, Scalar scale, const ParamSet<Scalar>& b) {
  check_compatible(a, b);
  ParamSet<Scalar> out = a;
  for (auto& [name, t] : out) t.values += scale * b.at(name).values;
  return out;
}

/// 64-bit FNV-1a over names, shapes and raw value bytes.
template <typename Scalar>
std::uint64_t checksum(const ParamSet<Scalar>& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : p) {
    feed(name.data(), name.size());
    feed(t.shape.data(), t.shape.size() * sizeof(int));
    feed(t.values.data(), static_cast<std::size_t>(t.values.size()) * sizeof(Scalar));
  }
  return h;
}

/// Flattened concatenation in canonical (map) order.
template <typename Scalar>
Vector<Scalar> flatten(const ParamSet<Scalar>& p) {
  Vector<Scalar> out(parameter_count(p));
  Index offset = 0;
  for (const auto& [name, t] : p) {
    out.segment(offset, t.size()) = t.values;
    offset += t.size();
  }
  return out;
}

}  // namespace duw

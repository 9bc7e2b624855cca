#pragma once

#include <cmath>

#include "duw/tensor.hpp"

namespace duw {

/// Adam over a ParamSet. Used for auxiliary optimizations (encoder
/// pre-training, trigger reverse-engineering); federated training is plain SGD.
template <typename Scalar>
class Adam {
public:
  explicit Adam(Scalar lr, Scalar beta1 = Scalar(0.9), Scalar beta2 = Scalar(0.999), Scalar eps = Scalar(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads) {
    if (m_.empty()) {
      m_ = zeros_like(params);
      v_ = zeros_like(params);
    }
    ++t_;
    const Scalar c1 = Scalar(1) - std::pow(beta1_, Scalar(t_));
    const Scalar c2 = Scalar(1) - std::pow(beta2_, Scalar(t_));
    for (auto& [name, p] : params) {
      const auto& g = grads.at(name).values;
      auto& m = m_.at(name).values;
      auto& v = v_.at(name).values;
      m = beta1_ * m + (Scalar(1) - beta1_) * g;
      v = beta2_ * v + (Scalar(1) - beta2_) * g.cwiseAbs2();
      p.values.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }

  void set_lr(Scalar lr) { lr_ = lr; }

private:
  Scalar lr_, beta1_, beta2_, eps_;
  ParamSet<Scalar> m_, v_;
  int t_ = 0;
};

}  // namespace duw

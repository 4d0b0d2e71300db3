#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "a2snas/parameter.hpp"

namespace a2snas {

using GradMap = std::map<std::string, Tensor<float>>;

/// Adam with bias correction. Moments live per parameter name.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options opts) : opts_(opts) {}

  /// One update of every trainable parameter of `kind` that has a gradient.
  void step(ParamStore& params, const GradMap& grads, double lr, ParamKind kind);

  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  std::map<std::string, Tensor<float>>& first_moments() { return m_; }
  std::map<std::string, Tensor<float>>& second_moments() { return v_; }
  const std::map<std::string, Tensor<float>>& first_moments() const { return m_; }
  const std::map<std::string, Tensor<float>>& second_moments() const { return v_; }

 private:
  Options opts_;
  std::int64_t steps_ = 0;
  std::map<std::string, Tensor<float>> m_, v_;
};

/// SGD with heavy-ball momentum: v = mu * v + g; theta -= lr * v.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}

  void step(ParamStore& params, const GradMap& grads, double lr, ParamKind kind);

  std::map<std::string, Tensor<float>>& velocity() { return velocity_; }
  const std::map<std::string, Tensor<float>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  std::map<std::string, Tensor<float>> velocity_;
};

}  // namespace a2snas

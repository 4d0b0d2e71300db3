#include "a2snas/optim.hpp"

#include <cmath>

namespace a2snas {

void Adam::step(ParamStore& params, const GradMap& grads, double lr, ParamKind kind) {
  ++steps_;
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
  for (auto& [name, p] : params) {
    if (!p.trainable || p.kind != kind) continue;
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    auto& m = m_.try_emplace(name, Tensor<float>::zeros(p.value.shape())).first->second.mutable_values();
    auto& v = v_.try_emplace(name, Tensor<float>::zeros(p.value.shape())).first->second.mutable_values();
    auto& w = p.value.mutable_values();
    const auto gv = g->second.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(gv[i]);
      const double mi = opts_.beta1 * static_cast<double>(m[i]) + (1.0 - opts_.beta1) * gi;
      const double vi = opts_.beta2 * static_cast<double>(v[i]) + (1.0 - opts_.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + opts_.eps);
      w[i] = static_cast<float>(static_cast<double>(w[i]) - update);
    }
  }
}

void SgdMomentum::step(ParamStore& params, const GradMap& grads, double lr, ParamKind kind) {
  for (auto& [name, p] : params) {
    if (!p.trainable || p.kind != kind) continue;
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    auto& vel = velocity_.try_emplace(name, Tensor<float>::zeros(p.value.shape())).first->second.mutable_values();
    auto& w = p.value.mutable_values();
    const auto gv = g->second.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double vi = momentum_ * static_cast<double>(vel[i]) + static_cast<double>(gv[i]);
      vel[i] = static_cast<float>(vi);
      w[i] = static_cast<float>(static_cast<double>(w[i]) - lr * vi);
    }
  }
}

}  // namespace a2snas

#include "a2snas/parameter.hpp"

#include <cmath>

namespace a2snas {

Parameter& ParamStore::add(const std::string& name, Tensor<float> value, bool trainable, ParamKind kind) {
  auto [it, inserted] = params_.emplace(name, Parameter{name, std::move(value), trainable, kind});
  if (!inserted) throw ArgumentError("duplicate parameter name '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

std::int64_t ParamStore::count_values(ParamKind kind) const {
  std::int64_t n = 0;
  for (const auto& [name, p] : params_) {
    if (p.trainable && p.kind == kind) n += p.value.numel();
  }
  return n;
}

std::map<std::string, Tensor<float>> ParamStore::bind(Tape<float>* tape, Track track) const {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, p] : params_) {
    bool tracked = false;
    if (tape && p.trainable) {
      tracked = track == Track::kAll || (track == Track::kWeights && p.kind == ParamKind::kWeight) ||
                (track == Track::kArch && p.kind == ParamKind::kArch);
    }
    out.emplace(name, tracked ? tape->leaf(p.value, name) : p.value.detached());
  }
  return out;
}

Tensor<float> he_normal(Shape shape, std::int64_t fan_in, std::uint64_t seed, const std::string& name) {
  Rng rng = Rng::stream(seed, name);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<float> v(static_cast<std::size_t>(shape.numel()));
  for (auto& e : v) e = static_cast<float>(stddev * rng.normal());
  return Tensor<float>(shape, std::move(v));
}

}  // namespace a2snas

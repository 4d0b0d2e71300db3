#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "a2snas/rng.hpp"
#include "a2snas/tape.hpp"
#include "a2snas/tensor.hpp"

namespace a2snas {

enum class ParamKind { kWeight, kArch };

struct Parameter {
  std::string name;
  Tensor<float> value;
  bool trainable = true;
  ParamKind kind = ParamKind::kWeight;
};

/// Which trainable parameters become tape leaves during a forward pass.
enum class Track { kNone, kWeights, kArch, kAll };

/// Named parameters of one model, kept in lexicographic name order.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor<float> value, bool trainable = true,
                 ParamKind kind = ParamKind::kWeight);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Parameter& at(const std::string& name) const;
  Parameter& at(const std::string& name);

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  /// Number of scalar values held by trainable parameters of `kind`.
  std::int64_t count_values(ParamKind kind) const;

  /// Tensors for a forward pass: tracked parameters are registered as tape
  /// leaves, the rest are returned as constants.
  std::map<std::string, Tensor<float>> bind(Tape<float>* tape, Track track) const;

 private:
  std::map<std::string, Parameter> params_;
};

/// He-normal initialization: N(0, sqrt(2 / fan_in)), drawn from the stream keyed by `name`.
Tensor<float> he_normal(Shape shape, std::int64_t fan_in, std::uint64_t seed, const std::string& name);

}  // namespace a2snas

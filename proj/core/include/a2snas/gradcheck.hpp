#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "a2snas/tape.hpp"
#include "a2snas/tensor.hpp"

namespace a2snas {

/// Builds a scalar from `inputs` on `tape`. Called once with tracked leaves and
/// repeatedly with constant inputs for the finite differences.
using ScalarFn = std::function<Tensor<double>(Tape<double>& tape, const std::vector<Tensor<double>>& inputs)>;

struct GradCheckResult {
  /// max |analytic - numeric| / max(max |numeric|, 1e-8), worst over all inputs.
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_input = 0;
};

/// Reverse-mode gradients against central differences with step `eps`.
GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs, double eps = 1e-3);

enum class GradOp {
  kConv3d,         // k3, pad 1
  kConv3dStrided,  // k3, stride (1,2,2), pad 1
  kConv3dDilated,  // k3, dilation 2, pad 2
  kAvgPool3d,      // window (2,2,2), ceil mode
  kUpsampleNearest3d,
  kPoolUpsample,  // spectral pool then restore
  kBatchNorm3d,   // batch statistics
  kBatchNorm3dRunning,
  kClassifierHead,
  kRelu,
  kSoftmax,
  kSmoothmax,
  kCrossEntropy,
  kWeightedSum,
  kMixedA2SConv,  // full searchable block, all inputs
};

inline constexpr GradOp kAllGradOps[] = {
    GradOp::kConv3d,          GradOp::kConv3dStrided, GradOp::kConv3dDilated, GradOp::kAvgPool3d,
    GradOp::kUpsampleNearest3d, GradOp::kPoolUpsample, GradOp::kBatchNorm3d,  GradOp::kBatchNorm3dRunning,
    GradOp::kClassifierHead,  GradOp::kRelu,          GradOp::kSoftmax,       GradOp::kSmoothmax,
    GradOp::kCrossEntropy,    GradOp::kWeightedSum,   GradOp::kMixedA2SConv,
};

std::string_view to_string(GradOp op);

/// Checks one op on random operands drawn from `seed`. `x_shape` is the main
/// input: rank 5 for volume ops, rank 1 for softmax/smoothmax, (N, K) for
/// cross-entropy. The scalar is <output, fixed random weights>.
GradCheckResult grad_check_op(GradOp op, const Shape& x_shape, std::uint64_t seed, double eps = 1e-3);

}  // namespace a2snas

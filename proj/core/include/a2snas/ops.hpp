#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "a2snas/tape.hpp"
#include "a2snas/tensor.hpp"

// Differentiable operators over rank-5 (N, C, D, H, W) tensors.
//
// Every operator takes an optional tape. With a null tape, or when no input is
// tracked, the result is a plain value and nothing is recorded. Reductions
// accumulate in double before rounding to T.

namespace a2snas::ops {

struct Conv3dGeometry {
  Dhw stride{1, 1, 1};
  Dhw dilation{1, 1, 1};
  Dhw pad{0, 0, 0};
};

/// Output extent of a strided, dilated, padded window along one axis.
std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t dilation,
                             std::int64_t pad);

/// x: (N,Ci,D,H,W), w: (Co,Ci,k,k,k), b: (Co).
template <class T>
Tensor<T> conv3d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const Conv3dGeometry& geom);

/// Non-overlapping average pooling (kernel == stride). With ceil_mode the last
/// window along an axis may be truncated; its mean is taken over the voxels it covers.
template <class T>
Tensor<T> avg_pool3d(Tape<T>* tape, const Tensor<T>& x, Dhw kernel, Dhw stride, bool ceil_mode = true);

/// Replicates each voxel `factors` times per axis, then crops to `target`.
template <class T>
Tensor<T> upsample_nearest3d(Tape<T>* tape, const Tensor<T>& x, Dhw factors, Dhw target);

enum class NormMode { kBatchStats, kRunningStats };

/// Running moments owned by the model; updated in place in batch-stats mode.
template <class T>
struct RunningStats {
  std::span<T> mean;
  std::span<T> var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization over (N, D, H, W).
template <class T>
Tensor<T> batch_norm3d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       NormMode mode, const RunningStats<T>* running = nullptr);

/// Global average pool over (D,H,W) followed by an affine map; w: (K,C), b: (K).
template <class T>
Tensor<T> classifier_head(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <class T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x);

/// Softmax of a logit vector together with its log-sum-exp (smoothmax).
template <class T>
std::pair<Tensor<T>, Tensor<T>> softmax_smoothmax(Tape<T>* tape, const Tensor<T>& v);

/// Mean cross-entropy of logits (N,K) against class indices.
template <class T>
Tensor<T> cross_entropy(Tape<T>* tape, const Tensor<T>& logits, std::span<const std::int32_t> labels);

/// sum_k weights[k] * xs[k]; all xs share one shape, weights is a vector of xs.size().
template <class T>
Tensor<T> weighted_sum(Tape<T>* tape, std::span<const Tensor<T>> xs, const Tensor<T>& weights);

template <class T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, double factor);

/// Sum of all elements, as a scalar.
template <class T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x);

/// Weighted sum of all elements with fixed weights, as a scalar.
template <class T>
Tensor<T> dot_const(Tape<T>* tape, const Tensor<T>& x, std::span<const T> weights);

}  // namespace a2snas::ops

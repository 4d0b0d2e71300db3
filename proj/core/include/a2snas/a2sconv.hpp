#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "a2snas/ops.hpp"

namespace a2snas {

/// Outer candidates: where (if anywhere) the block pools before convolving.
enum class OuterOp : std::uint8_t { kNoPool = 0, kSpectralPool = 1, kSpatialPool = 2 };

/// Inner candidates: 3D convolution kernel size and dilation.
enum class InnerOp : std::uint8_t { kK3D1 = 0, kK3D2 = 1, kK5D1 = 2, kK5D2 = 3 };

inline constexpr std::array<OuterOp, 3> kOuterOps{OuterOp::kNoPool, OuterOp::kSpectralPool, OuterOp::kSpatialPool};
inline constexpr std::array<InnerOp, 4> kInnerOps{InnerOp::kK3D1, InnerOp::kK3D2, InnerOp::kK5D1, InnerOp::kK5D2};

/// Pooling window/stride of an outer op, (1,1,1) for kNoPool.
Dhw pool_factors(OuterOp op);
std::int64_t kernel_size(InnerOp op);
std::int64_t dilation(InnerOp op);
/// Same-padding for an inner op: dilation * (kernel - 1) / 2 on every axis.
ops::Conv3dGeometry inner_geometry(InnerOp op);

std::string_view to_string(OuterOp op);
std::string_view to_string(InnerOp op);
std::optional<OuterOp> parse_outer(std::string_view token);
std::optional<InnerOp> parse_inner(std::string_view token);

/// Discrete choice of one block.
struct Choice {
  OuterOp outer = OuterOp::kNoPool;
  InnerOp inner = InnerOp::kK3D1;
  friend bool operator==(const Choice&, const Choice&) = default;
};

/// One inner candidate: conv kernel (C,C,k,k,k) + bias, then batch norm.
template <class T>
struct Candidate {
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;
  std::optional<ops::RunningStats<T>> running;
};

/// Architecture logits of one block: 3 outer (beta) and 4 inner (alpha).
template <class T>
struct BlockLogits {
  Tensor<T> beta;
  Tensor<T> alpha;
};

/// Searchable block: four candidate weight sets shared by all three outer branches.
template <class T>
struct A2SConvBlock {
  int block_id = 0;
  std::int64_t channels = 0;
  std::array<Candidate<T>, 4> candidates;
  BlockLogits<T> logits;
};

/// Plain logit values of every block, used for derivation.
struct ArchParams {
  struct Block {
    std::array<double, 3> beta{};
    std::array<double, 4> alpha{};
  };
  std::vector<Block> blocks;
};

/// Pools x according to `op`; also returns the pre-pooling (D,H,W).
template <class T>
std::pair<Tensor<T>, Dhw> apply_outer(Tape<T>* tape, const Tensor<T>& x, OuterOp op);

/// Nearest-neighbour upsampling by the op's factors, cropped back to `original`.
template <class T>
Tensor<T> restore_shape(Tape<T>* tape, const Tensor<T>& y, OuterOp op, Dhw original);

/// conv (same padding) -> batch norm -> relu.
template <class T>
Tensor<T> candidate_conv(Tape<T>* tape, const Tensor<T>& x, InnerOp op, const Candidate<T>& cand,
                         std::int64_t channels, ops::NormMode mode);

/// Softmax-weighted mixture over 3 outer x 4 inner branches, summed in (outer, inner) order.
template <class T>
Tensor<T> mixed_forward(Tape<T>* tape, const A2SConvBlock<T>& block, const Tensor<T>& x, ops::NormMode mode);

/// Single branch: pool -> candidate conv -> restore.
template <class T>
Tensor<T> discrete_forward(Tape<T>* tape, const Candidate<T>& cand, std::int64_t channels, const Tensor<T>& x,
                           Choice choice, ops::NormMode mode);

template <class T>
Tensor<T> discrete_forward(Tape<T>* tape, const A2SConvBlock<T>& block, const Tensor<T>& x, Choice choice,
                           ops::NormMode mode) {
  return discrete_forward(tape, block.candidates[static_cast<std::size_t>(choice.inner)], block.channels, x, choice,
                          mode);
}

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

/// Argmax of beta and of alpha, independently.
Choice derive_block(const ArchParams& arch, int block_id);

}  // namespace a2snas

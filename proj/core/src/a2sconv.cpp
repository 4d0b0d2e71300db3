#include "a2snas/a2sconv.hpp"

#include <string>

namespace a2snas {

Dhw pool_factors(OuterOp op) {
  switch (op) {
    case OuterOp::kSpectralPool:
      return {2, 1, 1};
    case OuterOp::kSpatialPool:
      return {1, 2, 2};
    case OuterOp::kNoPool:
      break;
  }
  return {1, 1, 1};
}

std::int64_t kernel_size(InnerOp op) { return op == InnerOp::kK3D1 || op == InnerOp::kK3D2 ? 3 : 5; }

std::int64_t dilation(InnerOp op) { return op == InnerOp::kK3D1 || op == InnerOp::kK5D1 ? 1 : 2; }

ops::Conv3dGeometry inner_geometry(InnerOp op) {
  const std::int64_t dil = dilation(op);
  const std::int64_t pad = dil * (kernel_size(op) - 1) / 2;
  return {{1, 1, 1}, {dil, dil, dil}, {pad, pad, pad}};
}

std::string_view to_string(OuterOp op) {
  switch (op) {
    case OuterOp::kNoPool:
      return "no_pool";
    case OuterOp::kSpectralPool:
      return "spectral_pool";
    case OuterOp::kSpatialPool:
      return "spatial_pool";
  }
  return "?";
}

std::string_view to_string(InnerOp op) {
  switch (op) {
    case InnerOp::kK3D1:
      return "k3d1";
    case InnerOp::kK3D2:
      return "k3d2";
    case InnerOp::kK5D1:
      return "k5d1";
    case InnerOp::kK5D2:
      return "k5d2";
  }
  return "?";
}

std::optional<OuterOp> parse_outer(std::string_view token) {
  for (OuterOp op : kOuterOps)
    if (to_string(op) == token) return op;
  return std::nullopt;
}

std::optional<InnerOp> parse_inner(std::string_view token) {
  for (InnerOp op : kInnerOps)
    if (to_string(op) == token) return op;
  return std::nullopt;
}

template <class T>
std::pair<Tensor<T>, Dhw> apply_outer(Tape<T>* tape, const Tensor<T>& x, OuterOp op) {
  const Dhw original = x.dhw();
  if (op == OuterOp::kNoPool) return {x, original};
  const Dhw f = pool_factors(op);
  return {ops::avg_pool3d(tape, x, f, f, /*ceil_mode=*/true), original};
}

template <class T>
Tensor<T> restore_shape(Tape<T>* tape, const Tensor<T>& y, OuterOp op, Dhw original) {
  if (op == OuterOp::kNoPool) return y;
  return ops::upsample_nearest3d(tape, y, pool_factors(op), original);
}

template <class T>
Tensor<T> candidate_conv(Tape<T>* tape, const Tensor<T>& x, InnerOp op, const Candidate<T>& cand,
                         std::int64_t channels, ops::NormMode mode) {
  if (x.shape().rank() != 5 || x.dim(1) != channels) {
    throw ShapeError("candidate " + std::string(to_string(op)) + " expects " + std::to_string(channels) +
                     " channels, input is " + x.shape().str());
  }
  Tensor<T> y = ops::conv3d(tape, x, cand.weight, cand.bias, inner_geometry(op));
  y = ops::batch_norm3d(tape, y, cand.gamma, cand.beta, mode, cand.running ? &*cand.running : nullptr);
  return ops::relu(tape, y);
}

template <class T>
Tensor<T> mixed_forward(Tape<T>* tape, const A2SConvBlock<T>& block, const Tensor<T>& x, ops::NormMode mode) {
  const auto outer_probs = ops::softmax_smoothmax(tape, block.logits.beta).first;
  const auto inner_probs = ops::softmax_smoothmax(tape, block.logits.alpha).first;
  std::vector<Tensor<T>> restored;
  restored.reserve(kOuterOps.size());
  for (OuterOp outer : kOuterOps) {
    auto [pooled, original] = apply_outer(tape, x, outer);
    std::vector<Tensor<T>> branches;
    branches.reserve(kInnerOps.size());
    for (InnerOp inner : kInnerOps) {
      branches.push_back(
          candidate_conv(tape, pooled, inner, block.candidates[static_cast<std::size_t>(inner)], block.channels, mode));
    }
    const Tensor<T> inner_mix = ops::weighted_sum<T>(tape, branches, inner_probs);
    restored.push_back(restore_shape(tape, inner_mix, outer, original));
  }
  return ops::weighted_sum<T>(tape, restored, outer_probs);
}

template <class T>
Tensor<T> discrete_forward(Tape<T>* tape, const Candidate<T>& cand, std::int64_t channels, const Tensor<T>& x,
                           Choice choice, ops::NormMode mode) {
  auto [pooled, original] = apply_outer(tape, x, choice.outer);
  const Tensor<T> y = candidate_conv(tape, pooled, choice.inner, cand, channels, mode);
  return restore_shape(tape, y, choice.outer, original);
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Choice derive_block(const ArchParams& arch, int block_id) {
  if (block_id < 0 || block_id >= static_cast<int>(arch.blocks.size())) {
    throw ArgumentError("block id " + std::to_string(block_id) + " out of range");
  }
  const auto& b = arch.blocks[static_cast<std::size_t>(block_id)];
  return {kOuterOps[argmax_lowest(b.beta)], kInnerOps[argmax_lowest(b.alpha)]};
}

#define A2SNAS_INSTANTIATE_A2SCONV(T)                                                                             \
  template std::pair<Tensor<T>, Dhw> apply_outer(Tape<T>*, const Tensor<T>&, OuterOp);                            \
  template Tensor<T> restore_shape(Tape<T>*, const Tensor<T>&, OuterOp, Dhw);                                     \
  template Tensor<T> candidate_conv(Tape<T>*, const Tensor<T>&, InnerOp, const Candidate<T>&, std::int64_t,       \
                                    ops::NormMode);                                                               \
  template Tensor<T> mixed_forward(Tape<T>*, const A2SConvBlock<T>&, const Tensor<T>&, ops::NormMode);            \
  template Tensor<T> discrete_forward(Tape<T>*, const Candidate<T>&, std::int64_t, const Tensor<T>&, Choice,      \
                                      ops::NormMode);

A2SNAS_INSTANTIATE_A2SCONV(float)
A2SNAS_INSTANTIATE_A2SCONV(double)

#undef A2SNAS_INSTANTIATE_A2SCONV

}  // namespace a2snas

#include "a2snas/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "a2snas/a2sconv.hpp"
#include "a2snas/ops.hpp"
#include "a2snas/rng.hpp"

namespace a2snas {

GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs, double eps) {
  std::vector<Tensor<double>> leaves;
  Tape<double> tape;
  for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.leaf(inputs[i], "input" + std::to_string(i)));
  const auto grads = tape.backward(fn(tape, leaves));

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto analytic = grads.at("input" + std::to_string(i)).values();
    std::vector<Tensor<double>> probe(inputs.begin(), inputs.end());
    std::vector<double> numeric(analytic.size());
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      const double original = inputs[i][static_cast<std::int64_t>(j)];
      auto eval = [&](double v) {
        probe[i] = inputs[i];
        probe[i].mutable_values()[j] = v;
        Tape<double> scratch;
        return fn(scratch, probe).item();
      };
      numeric[j] = (eval(original + eps) - eval(original - eps)) / (2.0 * eps);
    }
    double scale = 1e-8, worst = 0.0;
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      scale = std::max(scale, std::fabs(numeric[j]));
      worst = std::max(worst, std::fabs(analytic[j] - numeric[j]));
    }
    const double rel = worst / scale;
    result.max_abs_error = std::max(result.max_abs_error, worst);
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_input = i;
    }
  }
  return result;
}

std::string_view to_string(GradOp op) {
  switch (op) {
    case GradOp::kConv3d: return "conv3d";
    case GradOp::kConv3dStrided: return "conv3d_strided";
    case GradOp::kConv3dDilated: return "conv3d_dilated";
    case GradOp::kAvgPool3d: return "avg_pool3d";
    case GradOp::kUpsampleNearest3d: return "upsample_nearest3d";
    case GradOp::kPoolUpsample: return "pool_upsample";
    case GradOp::kBatchNorm3d: return "batch_norm3d";
    case GradOp::kBatchNorm3dRunning: return "batch_norm3d_running";
    case GradOp::kClassifierHead: return "classifier_head";
    case GradOp::kRelu: return "relu";
    case GradOp::kSoftmax: return "softmax";
    case GradOp::kSmoothmax: return "smoothmax";
    case GradOp::kCrossEntropy: return "cross_entropy";
    case GradOp::kWeightedSum: return "weighted_sum";
    case GradOp::kMixedA2SConv: return "mixed_a2sconv";
  }
  return "unknown";
}

namespace {

using TD = Tensor<double>;

TD random_tensor(Rng& rng, const Shape& s, double scale = 1.0, double offset = 0.0) {
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (auto& x : v) x = offset + scale * rng.normal();
  return TD(s, std::move(v));
}

// Values with magnitude in [0.1, 1.1): keeps relu away from its kink.
TD off_kink(Rng& rng, const Shape& s) {
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (auto& x : v) {
    const double m = 0.1 + rng.uniform();
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return TD(s, std::move(v));
}

// <y, r> for fixed random r, so every output element carries signal.
TD project(Tape<double>& tape, const TD& y, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "gradcheck/projection");
  std::vector<double> r(static_cast<std::size_t>(y.numel()));
  for (auto& v : r) v = rng.normal();
  return ops::dot_const<double>(&tape, y, r);
}

void require_rank(const Shape& s, int rank, GradOp op) {
  if (s.rank() != rank) {
    throw ArgumentError(std::string(to_string(op)) + " check needs a rank-" + std::to_string(rank) + " input, got " +
                        s.str());
  }
}

Dhw extents(const Shape& s) { return {s[2], s[3], s[4]}; }

}  // namespace

GradCheckResult grad_check_op(GradOp op, const Shape& x_shape, std::uint64_t seed, double eps) {
  Rng rng = Rng::stream(seed, "gradcheck/inputs", static_cast<std::uint64_t>(op));
  std::vector<TD> in;
  ScalarFn fn;
  switch (op) {
    case GradOp::kConv3d:
    case GradOp::kConv3dStrided:
    case GradOp::kConv3dDilated: {
      require_rank(x_shape, 5, op);
      ops::Conv3dGeometry g{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
      if (op == GradOp::kConv3dStrided) g.stride = {1, 2, 2};
      if (op == GradOp::kConv3dDilated) g = {{1, 1, 1}, {2, 2, 2}, {2, 2, 2}};
      const std::int64_t co = 2;
      in = {random_tensor(rng, x_shape), random_tensor(rng, Shape{co, x_shape[1], 3, 3, 3}, 0.5),
            random_tensor(rng, Shape{co}, 0.5)};
      fn = [g, seed](Tape<double>& t, const std::vector<TD>& v) {
        return project(t, ops::conv3d(&t, v[0], v[1], v[2], g), seed);
      };
      break;
    }
    case GradOp::kAvgPool3d:
      require_rank(x_shape, 5, op);
      in = {random_tensor(rng, x_shape)};
      fn = [seed](Tape<double>& t, const std::vector<TD>& v) {
        return project(t, ops::avg_pool3d(&t, v[0], {2, 2, 2}, {2, 2, 2}), seed);
      };
      break;
    case GradOp::kUpsampleNearest3d: {
      require_rank(x_shape, 5, op);
      const Dhw e = extents(x_shape);
      const Dhw target{2 * e.d - 1, e.h, 2 * e.w - 1};
      in = {random_tensor(rng, x_shape)};
      fn = [seed, target](Tape<double>& t, const std::vector<TD>& v) {
        return project(t, ops::upsample_nearest3d(&t, v[0], {2, 1, 2}, target), seed);
      };
      break;
    }
    case GradOp::kPoolUpsample:
      require_rank(x_shape, 5, op);
      in = {random_tensor(rng, x_shape)};
      fn = [seed](Tape<double>& t, const std::vector<TD>& v) {
        auto [pooled, original] = apply_outer(&t, v[0], OuterOp::kSpectralPool);
        auto y = restore_shape(&t, pooled, OuterOp::kSpectralPool, original);
        auto [p2, o2] = apply_outer(&t, y, OuterOp::kSpatialPool);
        return project(t, restore_shape(&t, p2, OuterOp::kSpatialPool, o2), seed);
      };
      break;
    case GradOp::kBatchNorm3d:
    case GradOp::kBatchNorm3dRunning: {
      require_rank(x_shape, 5, op);
      const Shape cs{x_shape[1]};
      in = {random_tensor(rng, x_shape, 1.0, 0.5), random_tensor(rng, cs, 0.3, 1.0), random_tensor(rng, cs, 0.5)};
      std::vector<double> mean(static_cast<std::size_t>(x_shape[1])), var(mean.size());
      for (std::size_t c = 0; c < mean.size(); ++c) {
        mean[c] = 0.5 * rng.normal();
        var[c] = 0.5 + rng.uniform();
      }
      const bool running = op == GradOp::kBatchNorm3dRunning;
      fn = [seed, running, mean, var](Tape<double>& t, const std::vector<TD>& v) mutable {
        ops::RunningStats<double> stats{mean, var};
        const auto mode = running ? ops::NormMode::kRunningStats : ops::NormMode::kBatchStats;
        return project(t, ops::batch_norm3d(&t, v[0], v[1], v[2], mode, running ? &stats : nullptr), seed);
      };
      break;
    }
    case GradOp::kClassifierHead: {
      require_rank(x_shape, 5, op);
      const std::int64_t k = 3;
      in = {random_tensor(rng, x_shape), random_tensor(rng, Shape{k, x_shape[1]}), random_tensor(rng, Shape{k})};
      fn = [seed](Tape<double>& t, const std::vector<TD>& v) {
        return project(t, ops::classifier_head(&t, v[0], v[1], v[2]), seed);
      };
      break;
    }
    case GradOp::kRelu:
      in = {off_kink(rng, x_shape)};
      fn = [seed](Tape<double>& t, const std::vector<TD>& v) { return project(t, ops::relu(&t, v[0]), seed); };
      break;
    case GradOp::kSoftmax:
    case GradOp::kSmoothmax: {
      require_rank(x_shape, 1, op);
      in = {random_tensor(rng, x_shape, 2.0)};
      const bool lse = op == GradOp::kSmoothmax;
      fn = [seed, lse](Tape<double>& t, const std::vector<TD>& v) {
        auto [probs, value] = ops::softmax_smoothmax(&t, v[0]);
        return lse ? value : project(t, probs, seed);
      };
      break;
    }
    case GradOp::kCrossEntropy: {
      require_rank(x_shape, 2, op);
      std::vector<std::int32_t> labels;
      for (std::int64_t i = 0; i < x_shape[0]; ++i)
        labels.push_back(static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(x_shape[1]))));
      in = {random_tensor(rng, x_shape, 2.0)};
      fn = [labels](Tape<double>& t, const std::vector<TD>& v) {
        return ops::cross_entropy<double>(&t, v[0], labels);
      };
      break;
    }
    case GradOp::kWeightedSum:
      in = {random_tensor(rng, x_shape), random_tensor(rng, x_shape), random_tensor(rng, x_shape),
            random_tensor(rng, Shape{3})};
      fn = [seed](Tape<double>& t, const std::vector<TD>& v) {
        const std::vector<TD> xs{v[0], v[1], v[2]};
        return project(t, ops::weighted_sum<double>(&t, xs, v[3]), seed);
      };
      break;
    case GradOp::kMixedA2SConv: {
      require_rank(x_shape, 5, op);
      const std::int64_t c = x_shape[1];
      in = {random_tensor(rng, x_shape), random_tensor(rng, Shape{3}), random_tensor(rng, Shape{4})};
      for (InnerOp inner : kInnerOps) {
        const std::int64_t k = kernel_size(inner);
        const double scale = 1.0 / std::sqrt(static_cast<double>(c * k * k * k));
        in.push_back(random_tensor(rng, Shape{c, c, k, k, k}, scale));
        in.push_back(random_tensor(rng, Shape{c}, 0.1));
        in.push_back(random_tensor(rng, Shape{c}, 0.1, 1.0));
        // Shifted well above zero so no relu input sits within eps of its kink.
        in.push_back(random_tensor(rng, Shape{c}, 0.1, 6.0));
      }
      fn = [seed, c](Tape<double>& t, const std::vector<TD>& v) {
        A2SConvBlock<double> block;
        block.channels = c;
        block.logits = {v[1], v[2]};
        for (std::size_t i = 0; i < 4; ++i) {
          block.candidates[i] = {v[3 + 4 * i], v[4 + 4 * i], v[5 + 4 * i], v[6 + 4 * i], std::nullopt};
        }
        return project(t, mixed_forward(&t, block, v[0], ops::NormMode::kBatchStats), seed);
      };
      break;
    }
  }
  return grad_check(fn, in, eps);
}

}  // namespace a2snas

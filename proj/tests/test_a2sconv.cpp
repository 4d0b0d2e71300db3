#include <cmath>

#include <gtest/gtest.h>

#include "a2snas/a2sconv.hpp"
#include "a2snas/gradcheck.hpp"
#include "oracles.hpp"

using namespace a2snas;

namespace {

template <class T>
A2SConvBlock<T> random_block(std::int64_t c, std::uint64_t seed) {
  A2SConvBlock<T> block;
  block.channels = c;
  for (InnerOp op : kInnerOps) {
    const std::int64_t k = kernel_size(op);
    const auto i = static_cast<std::size_t>(op);
    const std::string tag(to_string(op));
    block.candidates[i].weight = oracle::random<T>(Shape{c, c, k, k, k}, seed, (tag + "w").c_str(), 0.3);
    block.candidates[i].bias = oracle::random<T>(Shape{c}, seed, (tag + "b").c_str(), 0.1);
    block.candidates[i].gamma = Tensor<T>::full(Shape{c}, T(1));
    block.candidates[i].beta = oracle::random<T>(Shape{c}, seed, (tag + "beta").c_str(), 0.1);
  }
  block.logits = {Tensor<T>(Shape{3}), Tensor<T>(Shape{4})};
  return block;
}

template <class T>
void set_logits(A2SConvBlock<T>& block, std::vector<T> beta, std::vector<T> alpha) {
  block.logits = {Tensor<T>(Shape{3}, std::move(beta)), Tensor<T>(Shape{4}, std::move(alpha))};
}

double max_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

ArchParams one_block(std::array<double, 3> beta, std::array<double, 4> alpha) {
  ArchParams a;
  a.blocks.push_back({beta, alpha});
  return a;
}

}  // namespace

TEST(OpTables, PoolFactorsAndGeometry) {
  EXPECT_EQ(pool_factors(OuterOp::kNoPool), (Dhw{1, 1, 1}));
  EXPECT_EQ(pool_factors(OuterOp::kSpectralPool), (Dhw{2, 1, 1}));
  EXPECT_EQ(pool_factors(OuterOp::kSpatialPool), (Dhw{1, 2, 2}));
  EXPECT_EQ(inner_geometry(InnerOp::kK3D1).pad, (Dhw{1, 1, 1}));
  EXPECT_EQ(inner_geometry(InnerOp::kK3D2).pad, (Dhw{2, 2, 2}));
  EXPECT_EQ(inner_geometry(InnerOp::kK5D1).pad, (Dhw{2, 2, 2}));
  EXPECT_EQ(inner_geometry(InnerOp::kK5D2).pad, (Dhw{4, 4, 4}));
  EXPECT_EQ(inner_geometry(InnerOp::kK5D2).dilation, (Dhw{2, 2, 2}));
}

TEST(OpTables, NamesRoundTrip) {
  for (OuterOp op : kOuterOps) EXPECT_EQ(parse_outer(to_string(op)), op);
  for (InnerOp op : kInnerOps) EXPECT_EQ(parse_inner(to_string(op)), op);
  EXPECT_EQ(parse_outer("spectral_pool"), OuterOp::kSpectralPool);
  EXPECT_EQ(parse_inner("k5d2"), InnerOp::kK5D2);
  EXPECT_FALSE(parse_outer("max_pool").has_value());
  EXPECT_FALSE(parse_inner("k7d1").has_value());
}

TEST(ApplyOuter, HalvesTheRightAxes) {
  const Tensor<float> x(Shape{1, 1, 200, 19, 19});
  const auto [spec, o1] = apply_outer<float>(nullptr, x, OuterOp::kSpectralPool);
  EXPECT_EQ(spec.shape(), (Shape{1, 1, 100, 19, 19}));
  const auto [spat, o2] = apply_outer<float>(nullptr, x, OuterOp::kSpatialPool);
  EXPECT_EQ(spat.shape(), (Shape{1, 1, 200, 10, 10}));
  const auto [same, o3] = apply_outer<float>(nullptr, x, OuterOp::kNoPool);
  EXPECT_EQ(same.shape(), x.shape());
  EXPECT_EQ(o3, (Dhw{200, 19, 19}));
}

TEST(RestoreShape, ReplicatesThenCropsOddDepth) {
  const Tensor<float> x(Shape{1, 1, 19, 3, 3});
  const auto [pooled, original] = apply_outer<float>(nullptr, x, OuterOp::kSpectralPool);
  EXPECT_EQ(pooled.dim(2), 10);
  const auto back = restore_shape<float>(nullptr, pooled, OuterOp::kSpectralPool, original);
  EXPECT_EQ(back.shape(), x.shape());
  const auto same = restore_shape<float>(nullptr, x, OuterOp::kNoPool, x.dhw());
  EXPECT_EQ(same.shape(), x.shape());
}

TEST(CandidateConv, PreservesShapeForEveryKernel) {
  const auto block = random_block<float>(2, 1);
  const auto x = oracle::random<float>(Shape{2, 2, 7, 5, 6}, 1, "x");
  for (InnerOp op : kInnerOps) {
    const auto y = candidate_conv<float>(nullptr, x, op, block.candidates[static_cast<std::size_t>(op)], 2,
                                         ops::NormMode::kBatchStats);
    EXPECT_EQ(y.shape(), x.shape()) << to_string(op);
  }
}

TEST(CandidateConv, ZeroWeightsGiveZeroOutput) {
  auto block = random_block<float>(2, 1);
  auto& cand = block.candidates[0];
  cand.weight = Tensor<float>(cand.weight.shape());
  cand.bias = Tensor<float>(Shape{2});
  cand.beta = Tensor<float>(Shape{2});
  const auto x = oracle::random<float>(Shape{1, 2, 3, 3, 3}, 2, "x");
  const auto y = candidate_conv<float>(nullptr, x, InnerOp::kK3D1, cand, 2, ops::NormMode::kBatchStats);
  for (float v : y.values()) EXPECT_EQ(v, 0.0f);
}

TEST(CandidateConv, ChannelMismatchThrows) {
  const auto block = random_block<float>(2, 1);
  const Tensor<float> x(Shape{1, 3, 3, 3, 3});
  EXPECT_THROW(candidate_conv<float>(nullptr, x, InnerOp::kK3D1, block.candidates[0], 2, ops::NormMode::kBatchStats),
               ShapeError);
}

TEST(ShapeInvariance, AllBranchesAndMixtureOnExtentsOneToEight) {
  const auto block = random_block<float>(1, 3);
  for (std::int64_t d = 1; d <= 8; ++d)
    for (std::int64_t h = 1; h <= 8; ++h)
      for (std::int64_t w = 1; w <= 8; ++w) {
        const Tensor<float> x = Tensor<float>::full(Shape{1, 1, d, h, w}, 0.5f);
        for (OuterOp outer : kOuterOps)
          for (InnerOp inner : kInnerOps) {
            const auto y = discrete_forward<float>(nullptr, block, x, {outer, inner}, ops::NormMode::kBatchStats);
            ASSERT_EQ(y.shape(), x.shape()) << to_string(outer) << '/' << to_string(inner) << ' ' << x.shape().str();
          }
        ASSERT_EQ(mixed_forward<float>(nullptr, block, x, ops::NormMode::kBatchStats).shape(), x.shape());
      }
}

TEST(MixedForward, UniformLogitsGiveMeanOfRestoredBranches) {
  const auto block = random_block<double>(2, 5);
  const auto x = oracle::random<double>(Shape{2, 2, 5, 4, 3}, 5, "x");
  const auto mixed = mixed_forward<double>(nullptr, block, x, ops::NormMode::kBatchStats);
  // Independent assembly: mean over outer of restore(mean over inner of branch).
  std::vector<double> expect(static_cast<std::size_t>(x.numel()), 0.0);
  for (OuterOp outer : kOuterOps) {
    for (InnerOp inner : kInnerOps) {
      const auto y = discrete_forward<double>(nullptr, block, x, {outer, inner}, ops::NormMode::kBatchStats);
      for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += y[static_cast<std::int64_t>(i)] / 12.0;
    }
  }
  EXPECT_LT(oracle::max_abs_diff(expect, mixed.values()), 1e-6);
}

TEST(MixedForward, SaturatedLogitsSelectOneBranch) {
  auto block = random_block<double>(2, 7);
  const auto x = oracle::random<double>(Shape{2, 2, 5, 5, 4}, 7, "x");
  for (OuterOp outer : kOuterOps)
    for (InnerOp inner : kInnerOps) {
      std::vector<double> beta(3, -40.0), alpha(4, -40.0);
      beta[static_cast<std::size_t>(outer)] = 40.0;
      alpha[static_cast<std::size_t>(inner)] = 40.0;
      set_logits(block, beta, alpha);
      const auto mixed = mixed_forward<double>(nullptr, block, x, ops::NormMode::kBatchStats);
      const auto single = discrete_forward<double>(nullptr, block, x, {outer, inner}, ops::NormMode::kBatchStats);
      EXPECT_LT(max_diff(mixed, single), 1e-5) << to_string(outer) << '/' << to_string(inner);
    }
}

TEST(MixedForward, OutputIsBranchTermOverItsWeightWhenOthersVanish) {
  auto block = random_block<double>(1, 9);
  const auto x = oracle::random<double>(Shape{1, 1, 4, 4, 4}, 9, "x");
  const double inf = std::numeric_limits<double>::infinity();
  set_logits(block, {-inf, 0.0, -inf}, {-inf, -inf, 0.0, -inf});
  const auto mixed = mixed_forward<double>(nullptr, block, x, ops::NormMode::kBatchStats);
  const auto single =
      discrete_forward<double>(nullptr, block, x, {OuterOp::kSpectralPool, InnerOp::kK5D1}, ops::NormMode::kBatchStats);
  EXPECT_LT(max_diff(mixed, single), 1e-12);
}

TEST(MixedForward, GradientsReachLogitsAndEveryWeightSet) {
  const auto block = random_block<double>(2, 11);
  Tape<double> tape;
  A2SConvBlock<double> tracked = block;
  tracked.logits.beta = tape.leaf(block.logits.beta, "beta");
  tracked.logits.alpha = tape.leaf(block.logits.alpha, "alpha");
  for (InnerOp op : kInnerOps) {
    auto& c = tracked.candidates[static_cast<std::size_t>(op)];
    c.weight = tape.leaf(c.weight, std::string(to_string(op)) + ".w");
  }
  const auto x = oracle::random<double>(Shape{2, 2, 4, 4, 4}, 11, "x");
  const auto y = mixed_forward(&tape, tracked, x, ops::NormMode::kBatchStats);
  const auto r = oracle::random<double>(y.shape(), 11, "r");
  const auto grads = tape.backward(ops::dot_const<double>(&tape, y, r.values()));
  for (const auto& [name, g] : grads) {
    double norm = 0;
    for (double v : g.values()) norm += v * v;
    EXPECT_GT(norm, 0.0) << name;
  }
}

TEST(MixedForward, CompositeGradientMatchesFiniteDifferences) {
  for (const Shape& s : {Shape{2, 1, 3, 3, 3}, Shape{1, 2, 4, 3, 3}, Shape{2, 2, 3, 4, 2}, Shape{1, 1, 5, 4, 4},
                         Shape{2, 1, 2, 3, 5}}) {
    const auto r = grad_check_op(GradOp::kMixedA2SConv, s, 17);
    EXPECT_LT(r.max_rel_error, 1e-3) << s.str() << " input " << r.worst_input;
  }
}

TEST(DeriveBlock, ArgmaxPerSpace) {
  EXPECT_EQ(derive_block(one_block({0.1, 0.9, 0.2}, {0, 0, 1, 0}), 0),
            (Choice{OuterOp::kSpectralPool, InnerOp::kK5D1}));
}

TEST(DeriveBlock, SpatialPoolWhenLastBetaWins) {
  EXPECT_EQ(derive_block(one_block({0.1, 0.2, 0.9}, {0, 0, 0, 3}), 0).outer, OuterOp::kSpatialPool);
}

TEST(DeriveBlock, TiesGoToLowestIndex) {
  EXPECT_EQ(derive_block(one_block({0, 0, 0}, {0, 0, 0, 0}), 0), (Choice{OuterOp::kNoPool, InnerOp::kK3D1}));
  EXPECT_EQ(derive_block(one_block({0, 2, 2}, {1, 3, 3, 1}), 0), (Choice{OuterOp::kSpectralPool, InnerOp::kK3D2}));
}

TEST(DeriveBlock, InvariantUnderCommonShift) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, 3> beta{};
    std::array<double, 4> alpha{};
    for (auto& v : beta) v = rng.normal();
    for (auto& v : alpha) v = rng.normal();
    const Choice base = derive_block(one_block(beta, alpha), 0);
    const double shift = 7.3 * rng.normal();
    for (auto& v : beta) v += shift;
    for (auto& v : alpha) v += shift;
    ASSERT_EQ(derive_block(one_block(beta, alpha), 0), base);
  }
}

TEST(DeriveBlock, OutOfRangeBlockThrows) {
  EXPECT_THROW(derive_block(one_block({0, 0, 0}, {0, 0, 0, 0}), 1), ArgumentError);
}

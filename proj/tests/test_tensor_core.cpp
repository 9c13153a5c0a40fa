#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hrmedseg/gradcheck.hpp"
#include "hrmedseg/ops.hpp"
#include "test_util.hpp"

namespace hrmedseg {
namespace {

using test::max_abs_diff;
using T = Tensor<double>;
using F = Tensor<float>;
using Fn = std::function<T(const std::vector<T>&)>;

constexpr double kGradTol = 1e-5;

T mat(Index r, Index c, std::vector<double> v) { return T({r, c}, std::move(v)); }

// ---------------------------------------------------------------- tensor

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(T({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(T({2, 0}), ShapeError);
  const T t({2, 3, 4});
  EXPECT_EQ(t.size(), 24);
  EXPECT_EQ(numel(t.shape()), 24);
}

TEST(Tensor, GradientHasTheShapeOfTheValue) {
  std::mt19937_64 rng(1);
  auto x = test::randn<double>({3, 4}, rng).set_requires_grad(true);
  backward(sum(mul(x, x)));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().size(), static_cast<std::size_t>(x.size()));
  EXPECT_EQ(x.grad_tensor().shape(), x.shape());
}

TEST(Tensor, NonFiniteResultsAreErrors) {
  const F big({2}, 1e30f);
  EXPECT_THROW(scale(big, 1e30f), NumericError);
  EXPECT_THROW(div_rows(T({1, 1}, 1.0), T({1, 1}, 0.0)), NumericError);
}

TEST(Tensor, RecordedResultsAreImmutable) {
  auto x = T({2}, 1.0).set_requires_grad(true);
  auto y = scale(x, 2.0);
  EXPECT_THROW(y.mutable_data(), std::logic_error);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  auto x = T({2, 2}, 1.0).set_requires_grad(true);
  NoGradGuard guard;
  auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->is_leaf());
}

// ---------------------------------------------------------------- matmul

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  std::mt19937_64 rng(2);
  const auto b = test::randn<double>({2, 5}, rng);
  const auto eye = mat(2, 2, {1, 0, 0, 1});
  EXPECT_TRUE(test::bit_equal(matmul(eye, b), b));
}

TEST(Matmul, HandExample) {
  const auto r = matmul(mat(2, 2, {1, 2, 3, 4}), mat(2, 1, {1, 1}));
  EXPECT_EQ(r.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(r.data()[0], 3);
  EXPECT_DOUBLE_EQ(r.data()[1], 7);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  EXPECT_THROW(matmul(T({2, 3}), T({2, 3})), ShapeError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  Fn f = [](const std::vector<T>& in) { return sum(matmul(in[0], in[1])); };
  EXPECT_LT(test::grad_error<double>(f, {test::randn<double>({5, 7}, rng), test::randn<double>({7, 3}, rng)}),
            kGradTol);
}

// ---------------------------------------------------------------- softmax

TEST(Softmax, EqualValuesGiveUniformRow) {
  const auto s = softmax_rows(T({1, 4}, 2.5));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, ClosedFormTwoEntries) {
  const auto s = softmax_rows(mat(1, 2, {0.0, std::log(2.0)}));
  EXPECT_NEAR(s.data()[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.data()[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvarianceIsExactForRepresentableShifts) {
  // Quarter-integers plus 16 are exact, so the max-subtracted inputs coincide bitwise.
  const auto x = mat(2, 3, {0.25, -1.5, 2.0, 3.75, 0.0, -0.5});
  std::vector<double> shifted(x.data().begin(), x.data().end());
  for (double& v : shifted) v += 16.0;
  EXPECT_TRUE(test::bit_equal(softmax_rows(x), softmax_rows(mat(2, 3, shifted))));
}

TEST(Softmax, PropertyRowsAreNormalizedAndShiftInvariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Index m = 1 + trial % 7, n = 1 + (trial * 5) % 31;
    const auto x = test::randn<float>({m, n}, rng, 6.0);
    const auto s = softmax_rows(x);
    for (Index i = 0; i < m; ++i) {
      double row = 0;
      for (Index j = 0; j < n; ++j) {
        EXPECT_GE(s.data()[i * n + j], 0.0f);
        row += s.data()[i * n + j];
      }
      EXPECT_NEAR(row, 1.0, 1e-6);
    }
    const auto shifted = softmax_rows(add_scalar(x, 3.0f));
    EXPECT_LT(max_abs_diff(s, shifted), 1e-6);
  }
}

// ---------------------------------------------------------------- softmax attention

TEST(SoftmaxAttention, SingleKeyBroadcastsItsValue) {
  std::mt19937_64 rng(5);
  const auto q = test::randn<double>({4, 3}, rng), k = test::randn<double>({1, 3}, rng);
  const auto v = test::randn<double>({1, 2}, rng);
  const auto out = softmax_attention(q, k, v);
  for (Index i = 0; i < 4; ++i)
    for (Index c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(out.data()[i * 2 + c], v.data()[c]);
}

TEST(SoftmaxAttention, IdenticalKeysAverageTheValues) {
  std::mt19937_64 rng(6);
  const auto q = test::randn<double>({3, 2}, rng);
  const T k({5, 2}, std::vector<double>{0.3, -0.7, 0.3, -0.7, 0.3, -0.7, 0.3, -0.7, 0.3, -0.7});
  const auto v = test::randn<double>({5, 4}, rng);
  const auto out = softmax_attention(q, k, v);
  for (Index c = 0; c < 4; ++c) {
    double mean = 0;
    for (Index j = 0; j < 5; ++j) mean += v.data()[j * 4 + c] / 5;
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(out.data()[i * 4 + c], mean, 1e-14);
  }
}

TEST(SoftmaxAttention, MatchesBruteForceWeightedSum) {
  std::mt19937_64 rng(7);
  const Index m = 3, n = 4, d = 2, c = 5;
  const auto q = test::randn<double>({m, d}, rng), k = test::randn<double>({n, d}, rng);
  const auto v = test::randn<double>({n, c}, rng);
  const auto out = softmax_attention(q, k, v);
  for (Index i = 0; i < m; ++i) {
    std::vector<double> w(n);
    double z = 0;
    for (Index j = 0; j < n; ++j) {
      double dot = 0;
      for (Index t = 0; t < d; ++t) dot += q.data()[i * d + t] * k.data()[j * d + t];
      w[j] = std::exp(dot / std::sqrt(2.0));
      z += w[j];
    }
    for (Index col = 0; col < c; ++col) {
      double acc = 0;
      for (Index j = 0; j < n; ++j) acc += w[j] / z * v.data()[j * c + col];
      EXPECT_NEAR(out.data()[i * c + col], acc, 1e-13);
    }
  }
}

TEST(SoftmaxAttention, DimensionMismatchThrows) {
  EXPECT_THROW(softmax_attention(T({2, 3}), T({4, 2}), T({4, 1})), ShapeError);
  EXPECT_THROW(softmax_attention(T({2, 3}), T({4, 3}), T({3, 1})), ShapeError);
}

// ---------------------------------------------------------------- convolutions

TEST(Conv2d, IdentityOneByOneKernel) {
  std::mt19937_64 rng(8);
  const auto x = test::randn<double>({2, 3, 4, 5}, rng);
  T w({3, 3, 1, 1});
  for (Index o = 0; o < 3; ++o) w.mutable_data()[o * 3 + o] = 1;
  EXPECT_TRUE(test::bit_equal(conv2d(x, w), x));
}

TEST(Conv2d, ImpulseResponseIsClippedBlockOfOnes) {
  T x({1, 1, 5, 5});
  x.mutable_data()[0] = 1;       // corner
  x.mutable_data()[2 * 5 + 2] = 1;  // centre
  const auto out = conv2d(x, T({1, 1, 3, 3}, 1.0), {}, 1, 1);
  const double expected[5][5] = {{1, 1, 0, 0, 0}, {1, 2, 1, 1, 0}, {0, 1, 1, 1, 0}, {0, 1, 1, 1, 0}, {0, 0, 0, 0, 0}};
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_EQ(out.data()[i * 5 + j], expected[i][j]) << i << "," << j;
}

TEST(Conv2d, MatchesNaiveLoopOracle) {
  std::mt19937_64 rng(9);
  for (auto [stride, pad] : {std::pair<Index, Index>{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
    const auto x = test::randn<float>({2, 2, 5, 5}, rng);
    const auto w = test::randn<float>({3, 2, 3, 3}, rng);
    const auto b = test::randn<float>({3}, rng);
    const auto out = conv2d(x, w, b, stride, pad);
    EXPECT_LT(max_abs_diff(out, test::naive_conv2d(x, w, &b, stride, pad)), 1e-5) << stride << "," << pad;
  }
}

TEST(Conv2d, OutputSizeFormula) {
  EXPECT_EQ(conv_output_size(7, 3, 2, 1), 4);
  EXPECT_EQ(conv_output_size(64, 16, 16, 0), 4);
  EXPECT_THROW(conv_output_size(2, 5, 1, 0), ShapeError);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d(T({1, 2, 4, 4}), T({1, 3, 3, 3})), ShapeError);
  EXPECT_THROW(conv2d(T({1, 1, 2, 2}), T({1, 1, 3, 3})), ShapeError);
}

TEST(DepthwiseConv2d, ImpulseKernelsAreIdentity) {
  std::mt19937_64 rng(10);
  const auto x = test::randn<double>({1, 4, 6, 6}, rng);
  T w({4, 1, 3, 3});
  for (Index c = 0; c < 4; ++c) w.mutable_data()[c * 9 + 4] = 1;
  EXPECT_TRUE(test::bit_equal(depthwise_conv2d(x, w, {}, 1, 1), x));
}

TEST(DepthwiseConv2d, EqualsBlockDiagonalDenseConv) {
  std::mt19937_64 rng(11);
  const Index C = 3;
  const auto x = test::randn<float>({2, C, 6, 5}, rng);
  const auto w = test::randn<float>({C, 1, 3, 3}, rng);
  F dense({C, C, 3, 3});
  for (Index c = 0; c < C; ++c)
    for (Index t = 0; t < 9; ++t) dense.mutable_data()[(c * C + c) * 9 + t] = w.data()[c * 9 + t];
  for (Index stride : {1, 2})
    EXPECT_LT(max_abs_diff(depthwise_conv2d(x, w, {}, stride, 1), conv2d(x, dense, {}, stride, 1)), 1e-5);
}

TEST(TransposeConv2d, OnesKernelSpreadsAPixel) {
  const auto out = transpose_conv2d(T({1, 1, 1, 1}, 1.75), T({1, 1, 2, 2}, 1.0));
  EXPECT_EQ(out.shape(), (Shape{1, 1, 2, 2}));
  for (double v : out.data()) EXPECT_EQ(v, 1.75);
}

TEST(TransposeConv2d, TwoStagesQuadrupleTheGrid) {
  const F x({1, 1, 64, 64}, 0.5f);
  const auto once = transpose_conv2d(x, F({1, 2, 2, 2}, 0.25f));
  const auto twice = transpose_conv2d(once, F({2, 1, 2, 2}, 0.25f));
  EXPECT_EQ(twice.shape(), (Shape{1, 1, 256, 256}));
}

TEST(TransposeConv2d, MatchesNaiveScatterOracle) {
  std::mt19937_64 rng(12);
  const auto x = test::randn<float>({2, 3, 3, 4}, rng);
  const auto w = test::randn<float>({3, 2, 2, 2}, rng);
  EXPECT_LT(max_abs_diff(transpose_conv2d(x, w), test::naive_transpose_conv2d(x, w, 2)), 1e-5);
  const auto w3 = test::randn<float>({3, 2, 3, 3}, rng);
  EXPECT_LT(max_abs_diff(transpose_conv2d(x, w3, {}, 2), test::naive_transpose_conv2d(x, w3, 2)), 1e-5);
}

TEST(TransposeConv2d, IsTheAdjointOfStridedConv) {
  // <conv(x), y> == <x, convT(y)> for matching kernel layouts.
  std::mt19937_64 rng(13);
  const auto x = test::randn<double>({1, 2, 6, 6}, rng);
  const auto y = test::randn<double>({1, 3, 3, 3}, rng);
  const auto w = test::randn<double>({3, 2, 2, 2}, rng);  // conv: O=3, C=2
  const T& wt = w;                                          // transpose reads it as Cin=3 -> Cout=2
  const double lhs = sum(mul(conv2d(x, w, {}, 2, 0), y)).item();
  const double rhs = sum(mul(x, transpose_conv2d(y, wt, {}, 2))).item();
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

// ---------------------------------------------------------------- pooling, resize

TEST(AvgPool, ConstantInputIsFixed) {
  const F x({1, 2, 7, 5}, 0.375f);
  for (Index k : {1, 3, 5, 9, 13})
  {
    const auto out = avg_pool2d(x, k);
    for (float v : out.data()) EXPECT_FLOAT_EQ(v, 0.375f);
  }
}

TEST(AvgPool, KernelOneIsIdentity) {
  std::mt19937_64 rng(14);
  const auto x = test::randn<double>({1, 3, 4, 4}, rng);
  EXPECT_TRUE(test::bit_equal(avg_pool2d(x, 1), x));
}

TEST(AvgPool, CentreImpulseGivesOneNinth) {
  T x({1, 1, 5, 5});
  x.mutable_data()[12] = 1;
  const auto out = avg_pool2d(x, 3);
  EXPECT_NEAR(out.data()[12], 1.0 / 9.0, 1e-15);
  EXPECT_NEAR(out.data()[6], 1.0 / 9.0, 1e-15);
  EXPECT_EQ(out.data()[0], 0.0);
}

TEST(AvgPool, MatchesNaiveOracle) {
  std::mt19937_64 rng(15);
  const auto x = test::randn<float>({2, 2, 6, 7}, rng);
  for (Index k : {3, 5, 9, 13}) EXPECT_LT(max_abs_diff(avg_pool2d(x, k), test::naive_avg_pool(x, k)), 1e-5) << k;
}

TEST(Bilinear, ConstantImageStaysConstant) {
  const F x({1, 1, 3, 5}, -0.75f);
  for (const auto& out : {bilinear_resize(x, 7, 11), bilinear_resize(x, 2, 2)})
    for (float v : out.data()) EXPECT_FLOAT_EQ(v, -0.75f);
}

TEST(Bilinear, SameSizeIsBitIdentical) {
  std::mt19937_64 rng(16);
  const auto x = test::randn<float>({2, 3, 5, 4}, rng);
  EXPECT_TRUE(test::bit_equal(bilinear_resize(x, 5, 4), x));
}

TEST(Bilinear, MatchesHalfPixelFormula) {
  const auto x = T({1, 1, 2, 2}, std::vector<double>{0, 1, 0, 1});
  const auto out = bilinear_resize(x, 4, 4);
  // each row is [0, 1], so the value equals the clamped half-pixel source column
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      const double src = (static_cast<double>(j) + 0.5) * 0.5 - 0.5;
      EXPECT_NEAR(out.data()[i * 4 + j], std::clamp(src, 0.0, 1.0), 1e-15) << i << "," << j;
    }
}

TEST(Bilinear, NonpositiveTargetThrows) { EXPECT_THROW(bilinear_resize(T({1, 1, 2, 2}), 0, 3), ShapeError); }

// ---------------------------------------------------------------- layer norm, activations

TEST(LayerNorm, NormalizedRowIsUnchanged) {
  const auto x = mat(1, 4, {-1.5, -0.5, 0.5, 1.5});
  const double sd = std::sqrt(1.25);
  std::vector<double> normed;
  for (double v : x.data()) normed.push_back(v / sd);
  const auto out = layer_norm(mat(1, 4, normed), T({4}, 1.0), T({4}, 0.0));
  EXPECT_LT(max_abs_diff(out, mat(1, 4, normed)), 1e-5);
}

TEST(LayerNorm, RowMeanEqualsMeanOfBeta) {
  std::mt19937_64 rng(17);
  const auto x = test::randn<double>({6, 8}, rng, 3.0);
  const auto beta = test::randn<double>({8}, rng);
  const double beta_mean = std::accumulate(beta.data().begin(), beta.data().end(), 0.0) / 8;
  const auto plain = layer_norm(x, T({8}, 1.0), T({8}, 0.0));
  for (Index r = 0; r < 6; ++r) {
    double m = 0, v = 0;
    for (Index c = 0; c < 8; ++c) m += plain.data()[r * 8 + c] / 8;
    for (Index c = 0; c < 8; ++c) v += std::pow(plain.data()[r * 8 + c] - m, 2) / 8;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-5);
  }
  const auto flat = layer_norm(x, T({8}, 0.0), beta);
  for (Index r = 0; r < 6; ++r) {
    double m = 0;
    for (Index c = 0; c < 8; ++c) m += flat.data()[r * 8 + c] / 8;
    EXPECT_NEAR(m, beta_mean, 1e-12);
  }
}

TEST(Activation, FixedPoints) {
  const T zero({1}, 0.0);
  EXPECT_EQ(sigmoid(zero).item(), 0.5);
  EXPECT_EQ(silu(zero).item(), 0.0);
  EXPECT_EQ(gelu(zero).item(), 0.0);
  EXPECT_EQ(elu_plus_one(zero).item(), 1.0);
}

TEST(Activation, EluPlusOneIsStrictlyPositive) {
  const F x({5}, std::vector<float>{-80.f, -20.f, -1.f, 0.f, 50.f});
  const auto y = elu_plus_one(x);
  for (float v : y.data()) EXPECT_GT(v, 0.0f);
}

TEST(Activation, GeluGradientAtFixedPoints) {
  Fn f = [](const std::vector<T>& in) { return test::probe(gelu(in[0])); };
  EXPECT_LT(test::grad_error<double>(f, {T({5}, std::vector<double>{-2, -0.5, 0, 0.5, 2})}), 1e-4);
}

// ---------------------------------------------------------------- backward, finite differences

TEST(Backward, SumGivesOnes) {
  auto x = T({2, 3}, 0.7).set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceTheInput) {
  std::mt19937_64 rng(18);
  auto x = test::randn<double>({4}, rng).set_requires_grad(true);
  backward(sum(mul(x, x)));
  for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x.data()[i]);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = T({2}, 1.0).set_requires_grad(true);
  EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(Backward, SharedInputAccumulatesBothPaths) {
  std::mt19937_64 rng(19);
  auto x = test::randn<double>({3, 3}, rng).set_requires_grad(true);
  // y = sum(sigmoid(x)) + sum(x * x); dy/dx = s(1-s) + 2x
  backward(add(sum(sigmoid(x)), sum(mul(x, x))));
  for (Index i = 0; i < 9; ++i) {
    const double s = 1 / (1 + std::exp(-x.data()[i]));
    EXPECT_NEAR(x.grad()[i], s * (1 - s) + 2 * x.data()[i], 1e-14);
  }
}

TEST(Backward, EveryReachableLeafReceivesAGradient) {
  std::mt19937_64 rng(20);
  auto a = test::randn<double>({2, 3}, rng).set_requires_grad(true);
  auto b = test::randn<double>({3, 2}, rng).set_requires_grad(true);
  auto c = test::randn<double>({2}, rng).set_requires_grad(true);
  const auto loss = sum(linear(a, b, c));
  EXPECT_GE(Tape<double>(loss).size(), 2u);
  backward(loss);
  EXPECT_TRUE(a.has_grad() && b.has_grad() && c.has_grad());
}

TEST(FiniteDiff, SumGivesOnes) {
  std::mt19937_64 rng(21);
  const auto g = finite_diff_grad<double>([](const T& x) { return sum(x).item(); }, test::randn<double>({5}, rng));
  for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-10);
}

TEST(FiniteDiff, SquareAtThree) {
  const auto g = finite_diff_grad<double>([](const T& x) { return x.item() * x.item(); }, T({1}, 3.0));
  EXPECT_NEAR(g.item(), 6.0, 1e-8);
}

TEST(FiniteDiff, ConvergesOnAMatmulChain) {
  std::mt19937_64 rng(22);
  const auto a = test::randn<double>({3, 4}, rng), b = test::randn<double>({4, 2}, rng);
  auto x = test::randn<double>({2, 3}, rng);
  auto f = [&](const T& in) { return sum(gelu(matmul(matmul(in, a), b))).item(); };
  auto xr = x.clone().set_requires_grad(true);
  backward(sum(gelu(matmul(matmul(xr, a), b))));
  const auto coarse = finite_diff_grad<double>(f, x, 1e-2), fine = finite_diff_grad<double>(f, x, 1e-3);
  const double e_coarse = relative_error<double>(coarse.data(), xr.grad());
  const double e_fine = relative_error<double>(fine.data(), xr.grad());
  EXPECT_LT(e_fine, 1e-8);
  EXPECT_LT(e_fine, e_coarse);
}

// ---------------------------------------------------------------- property: every op passes a gradient check

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  Fn f;
};

class OpGradient : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  auto P = [](const T& y) { return test::probe(y); };
  return {
      {"matmul", {{3, 4}, {4, 2}}, [=](auto& in) { return P(matmul(in[0], in[1])); }},
      {"transpose", {{3, 4}}, [=](auto& in) { return P(transpose(in[0])); }},
      {"add", {{2, 3}, {2, 3}}, [=](auto& in) { return P(add(in[0], in[1])); }},
      {"sub", {{2, 3}, {2, 3}}, [=](auto& in) { return P(sub(in[0], in[1])); }},
      {"mul", {{2, 3}, {2, 3}}, [=](auto& in) { return P(mul(in[0], in[1])); }},
      {"scale", {{2, 3}}, [=](auto& in) { return P(scale(in[0], 1.7)); }},
      {"add_scalar", {{4}}, [=](auto& in) { return P(add_scalar(in[0], -0.3)); }},
      {"add_bias", {{2, 3, 4}, {4}}, [=](auto& in) { return P(add_bias(in[0], in[1])); }},
      {"linear", {{3, 4}, {4, 5}, {5}}, [=](auto& in) { return P(linear(in[0], in[1], in[2])); }},
      {"mean", {{3, 3}}, [=](auto& in) { return mean(mul(in[0], in[0])); }},
      {"sum_rows", {{3, 4}}, [=](auto& in) { return P(sum_rows(in[0])); }},
      {"div_rows", {{3, 4}, {3, 1}}, [=](auto& in) { return P(div_rows(in[0], add_scalar(mul(in[1], in[1]), 0.5))); }},
      {"reshape", {{2, 6}}, [=](auto& in) { return P(reshape(in[0], {3, 4})); }},
      {"slice_concat_batch", {{3, 2, 2, 2}},
       [=](auto& in) { return P(concat_batch<double>({slice_batch(in[0], 2), slice_batch(in[0], 0)})); }},
      {"slice_concat_cols", {{3, 5}},
       [=](auto& in) { return P(concat_cols<double>({slice_cols(in[0], 3, 2), slice_cols(in[0], 0, 2)})); }},
      {"tokens", {{1, 3, 2, 4}}, [=](auto& in) { return P(tokens_to_spatial(spatial_to_tokens(in[0]), 4, 2)); }},
      {"softmax_rows", {{3, 5}}, [=](auto& in) { return P(softmax_rows(in[0])); }},
      {"softmax_attention", {{3, 4}, {5, 4}, {5, 2}},
       [=](auto& in) { return P(softmax_attention(in[0], in[1], in[2])); }},
      {"gelu", {{7}}, [=](auto& in) { return P(gelu(in[0])); }},
      {"silu", {{7}}, [=](auto& in) { return P(silu(in[0])); }},
      {"sigmoid", {{7}}, [=](auto& in) { return P(sigmoid(in[0])); }},
      {"elu_plus_one", {{7}}, [=](auto& in) { return P(elu_plus_one(in[0])); }},
      {"relu", {{7}}, [=](auto& in) { return P(activation(in[0], Activation::relu)); }},
      {"layer_norm", {{3, 6}, {6}, {6}}, [=](auto& in) { return P(layer_norm(in[0], in[1], in[2])); }},
      {"conv2d", {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}}, [=](auto& in) { return P(conv2d(in[0], in[1], in[2], 2, 1)); }},
      {"depthwise", {{1, 3, 4, 4}, {3, 1, 3, 3}, {3}},
       [=](auto& in) { return P(depthwise_conv2d(in[0], in[1], in[2], 1, 1)); }},
      {"transpose_conv", {{1, 2, 3, 3}, {2, 3, 2, 2}, {3}},
       [=](auto& in) { return P(transpose_conv2d(in[0], in[1], in[2], 2)); }},
      {"avg_pool", {{1, 2, 5, 4}}, [=](auto& in) { return P(avg_pool2d(in[0], 3)); }},
      {"bilinear", {{1, 2, 3, 4}}, [=](auto& in) { return P(bilinear_resize(in[0], 7, 5)); }},
  };
}

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const auto c = op_cases().at(static_cast<std::size_t>(GetParam()));
  std::mt19937_64 rng(100 + static_cast<std::uint64_t>(GetParam()));
  std::vector<T> inputs;
  for (const auto& s : c.shapes) inputs.push_back(test::randn<double>(s, rng));
  EXPECT_LT(test::grad_error<double>(c.f, inputs), kGradTol) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const auto& info) { return std::string(op_cases().at(info.param).name); });

}  // namespace
}  // namespace hrmedseg

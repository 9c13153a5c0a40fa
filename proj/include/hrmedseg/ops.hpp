#pragma once

#include <vector>

#include "hrmedseg/tensor.hpp"

// Differentiable primitives. Every function records a backward rule on the
// tape when gradient recording is on and some input requires a gradient.
// Image tensors are laid out B x C x H x W, token tensors N x C, row-major.
namespace hrmedseg {

enum class Activation { gelu, silu, sigmoid, elu_plus_one, relu };

// Linear algebra.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a);

// Elementwise arithmetic on equal shapes.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);
template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, Scalar c);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }

// x[..., C] + bias[C]
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias);
// x[m x n] * w[n x k] + bias[k]
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias = {});

// Reductions.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x);
// m x n -> 1 x n
template <typename Scalar>
Tensor<Scalar> sum_rows(const Tensor<Scalar>& x);
// a[m x n] / b[m x 1], row-broadcast divisor
template <typename Scalar>
Tensor<Scalar> div_rows(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// Layout.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);
template <typename Scalar>
Tensor<Scalar> slice_batch(const Tensor<Scalar>& x, Index b);
template <typename Scalar>
Tensor<Scalar> concat_batch(const std::vector<Tensor<Scalar>>& parts);
template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index begin, Index count);
template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts);
// 1 x C x H x W -> (H*W) x C
template <typename Scalar>
Tensor<Scalar> spatial_to_tokens(const Tensor<Scalar>& x);
// (H*W) x C -> 1 x C x H x W
template <typename Scalar>
Tensor<Scalar> tokens_to_spatial(const Tensor<Scalar>& t, Index h, Index w);

// Attention.
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x);
// softmax(q k^T * scale) v; scale <= 0 selects 1/sqrt(d).
template <typename Scalar>
Tensor<Scalar> softmax_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                 Scalar scale = Scalar(0));

// Pointwise nonlinearities and normalization.
template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation kind);
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) { return activation(x, Activation::gelu); }
template <typename Scalar>
Tensor<Scalar> silu(const Tensor<Scalar>& x) { return activation(x, Activation::silu); }
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) { return activation(x, Activation::sigmoid); }
template <typename Scalar>
Tensor<Scalar> elu_plus_one(const Tensor<Scalar>& x) { return activation(x, Activation::elu_plus_one); }

inline constexpr double kLayerNormEps = 1e-6;

// Normalizes over the last axis, then applies gamma and beta of that length.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps = Scalar(kLayerNormEps));

// Convolutions (cross-correlation). Weight layouts:
//   conv2d            O x C x k x k
//   depthwise_conv2d  C x 1 x k x k
//   transpose_conv2d  Cin x Cout x k x k
// An undefined bias tensor means no bias.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias = {},
                      Index stride = 1, Index pad = 0);
template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias = {},
                                Index stride = 1, Index pad = 0);
template <typename Scalar>
Tensor<Scalar> transpose_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias = {},
                                Index stride = 2);

// Average over the cells of each window that fall inside the image.
// pad < 0 selects k / 2.
template <typename Scalar>
Tensor<Scalar> avg_pool2d(const Tensor<Scalar>& x, Index k, Index stride = 1, Index pad = -1);

// Half-pixel (align_corners = false) bilinear interpolation.
template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& x, Index out_h, Index out_w);

Index conv_output_size(Index in, Index k, Index stride, Index pad);

}  // namespace hrmedseg

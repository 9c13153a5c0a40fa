#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hrmedseg/config.hpp"
#include "hrmedseg/ops.hpp"
#include "hrmedseg/param_store.hpp"

// ECM decoder. The only encoder input is the final embedding; masks are
// produced from learned class queries refined by bidirectional cross-attention
// against a parameter-free multiscale view of that embedding.
namespace hrmedseg {

template <typename Scalar>
struct NeckWeights {
  Tensor<Scalar> conv1_w, conv1_b;  // D x C1 x 1 x 1
  Tensor<Scalar> conv2_w, conv2_b;  // D x D x 3 x 3

  static NeckWeights from(const ParamStore<Scalar>& store, const std::string& prefix = "neck");
};

template <typename Scalar>
struct SelfAttentionWeights {
  Tensor<Scalar> w_q, b_q, w_k, b_k, w_v, b_v;  // D x D, D

  static SelfAttentionWeights from(const ParamStore<Scalar>& store, const std::string& prefix);
};

template <typename Scalar>
struct MaskHeadWeights {
  Tensor<Scalar> up1_w, up1_b;  // D x U1 x 2 x 2
  Tensor<Scalar> up2_w, up2_b;  // U1 x U2 x 2 x 2
  std::vector<Tensor<Scalar>> mlp_w, mlp_b;  // D -> D -> ... -> U2

  static MaskHeadWeights from(const ParamStore<Scalar>& store, const std::string& prefix, Index mlp_depth);
};

template <typename Scalar>
void add_neck_params(ParamStore<Scalar>& store, const ModelConfig& cfg, std::mt19937_64& rng);
template <typename Scalar>
void add_decoder_params(ParamStore<Scalar>& store, const ModelConfig& cfg, std::mt19937_64& rng);

// 1x1 then 3x3 convolution, C1 -> decoder_dim channels.
template <typename Scalar>
Tensor<Scalar> neck(const Tensor<Scalar>& h, const NeckWeights<Scalar>& w);

// 2-D sinusoidal encoding, (h*w) x dim. The first dim/2 channels encode the
// row, the rest the column, each as interleaved sin/cos over a 1e4 frequency
// ladder.
template <typename Scalar>
Tensor<Scalar> positional_encoding(Index h, Index w, Index dim);

// (e + sum_k avgpool_k(e)) / (1 + #kernels)
template <typename Scalar>
Tensor<Scalar> multiscale_fuse(const Tensor<Scalar>& e, const std::vector<Index>& kernels);

// q + softmax(qWq (qWk)^T / sqrt(D)) qWv
template <typename Scalar>
Tensor<Scalar> query_self_attention(const Tensor<Scalar>& q, const SelfAttentionWeights<Scalar>& w);

template <typename Scalar>
struct CrossAttentionState {
  Tensor<Scalar> queries;  // C2 x D
  Tensor<Scalar> image;    // N x D
};

// One bidirectional round on a single image with an h x w token grid:
//   q' <- softmax(q' (e + psi)^T / sqrt(D)) fuse(e) + q'
//   e  <- softmax((fuse(e) + psi) q'^T / sqrt(D)) q' + fuse(e)
// fuse(e) is evaluated once and shared by both updates.
template <typename Scalar>
CrossAttentionState<Scalar> cross_attention_round(const Tensor<Scalar>& queries, const Tensor<Scalar>& image,
                                                  const Tensor<Scalar>& pos, Index h, Index w,
                                                  const std::vector<Index>& kernels);

// B x D x h x w embedding and C2 x D queries -> B x C2 x out_h x out_w
// probabilities. Two stride-2 transpose convolutions upsample by 4, each
// query maps through the MLP to a hyperplane over the upsampled features, and
// the logit map is resized bilinearly before the sigmoid.
template <typename Scalar>
Tensor<Scalar> mask_head(const Tensor<Scalar>& e, const Tensor<Scalar>& queries, Index out_h, Index out_w,
                         const MaskHeadWeights<Scalar>& w);

// Per-class hyperplanes produced by the query MLP, C2 x U2.
template <typename Scalar>
Tensor<Scalar> query_hyperplanes(const Tensor<Scalar>& queries, const MaskHeadWeights<Scalar>& w);

// Full decoder from the encoder embedding B x C1 x h x w.
template <typename Scalar>
Tensor<Scalar> decode(const Tensor<Scalar>& embedding, const ParamStore<Scalar>& store, const ModelConfig& cfg,
                      Index out_h, Index out_w);

}  // namespace hrmedseg

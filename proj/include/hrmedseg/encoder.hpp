#pragma once

#include <random>
#include <string>

#include "hrmedseg/config.hpp"
#include "hrmedseg/ops.hpp"
#include "hrmedseg/param_store.hpp"

// LGViT image encoder: patch embedding, a channel-interactive stage of MBConv
// blocks and a token-interactive stage of dual-gated linear attention blocks.
// All blocks run at the single resolution H/S x W/S.
namespace hrmedseg {

template <typename Scalar>
struct MBConvWeights {
  Tensor<Scalar> expand_w, expand_b;    // hidden x C1 x 1 x 1
  Tensor<Scalar> dw_w, dw_b;            // hidden x 1 x 3 x 3
  Tensor<Scalar> project_w, project_b;  // C1 x hidden x 1 x 1

  static MBConvWeights from(const ParamStore<Scalar>& store, const std::string& prefix);
};

template <typename Scalar>
struct DglaWeights {
  Tensor<Scalar> w_q, w_k, w_v;   // C1 x d
  Tensor<Scalar> w_gate;          // d x C1, inter-gate
  Tensor<Scalar> w_x;             // C1 x C1, exter-gate
  Tensor<Scalar> norm_gamma, norm_beta;
  Tensor<Scalar> fc1_w, fc1_b;    // C1 x hidden
  Tensor<Scalar> fc2_w, fc2_b;    // hidden x C1

  static DglaWeights from(const ParamStore<Scalar>& store, const std::string& prefix);
};

// Diagnostics of the factored attention path.
struct DglaStats {
  Index state_elements = 0;  // size of phi(K)^T V plus phi(K)^T 1
};

std::string encoder_block_prefix(Index block);

template <typename Scalar>
void add_patch_embed_params(ParamStore<Scalar>& store, const ModelConfig& cfg, std::mt19937_64& rng);
template <typename Scalar>
void add_mbconv_params(ParamStore<Scalar>& store, const std::string& prefix, const ModelConfig& cfg,
                       std::mt19937_64& rng);
template <typename Scalar>
void add_dgla_params(ParamStore<Scalar>& store, const std::string& prefix, const ModelConfig& cfg,
                     std::mt19937_64& rng);
template <typename Scalar>
void add_encoder_params(ParamStore<Scalar>& store, const ModelConfig& cfg, std::mt19937_64& rng);

// B x 3 x H x W -> B x C1 x H/S x W/S, non-overlapping S x S patches.
template <typename Scalar>
Tensor<Scalar> patch_embed(const Tensor<Scalar>& image, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                           Index patch_size);

// gelu(project(gelu(dw3x3(gelu(expand(x))))) + x)
template <typename Scalar>
Tensor<Scalar> mbconv_block(const Tensor<Scalar>& x, const MBConvWeights<Scalar>& w);

// silu(v) * w_gate
template <typename Scalar>
Tensor<Scalar> inter_gate(const Tensor<Scalar>& v, const Tensor<Scalar>& w_gate);

// Explicit O(N^2) evaluation of the normalized kernel attention. Forward only;
// used as the reference for the factored path.
template <typename Scalar>
Tensor<Scalar> dgla_naive(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v_gated);

// The N x N weight matrix phi(Q_i) phi(K_j)^T / sum_j phi(Q_i) phi(K_j)^T.
template <typename Scalar>
Tensor<Scalar> dgla_weights(const Tensor<Scalar>& q, const Tensor<Scalar>& k);

// Linear-time form: S = phi(K)^T V, z = phi(K)^T 1, row i = phi(Q_i) S / phi(Q_i) z.
template <typename Scalar>
Tensor<Scalar> dgla_factored(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v_gated,
                             DglaStats* stats = nullptr);

// Token block: x is N x C1.
//   V' = attention(xW_Q, xW_K, inter_gate(xW_V))
//   out = mlp(layer_norm(silu(xW_x) (*) V')) + x
template <typename Scalar>
Tensor<Scalar> dgla_block(const Tensor<Scalar>& x, const DglaWeights<Scalar>& w, Index heads = 1,
                          AttentionKind kind = AttentionKind::dgla);

template <typename Scalar>
Tensor<Scalar> encode(const Tensor<Scalar>& image, const ParamStore<Scalar>& store, const ModelConfig& cfg);

}  // namespace hrmedseg

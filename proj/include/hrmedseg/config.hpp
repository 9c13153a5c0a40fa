#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hrmedseg/tensor.hpp"

namespace hrmedseg {

enum class AttentionKind { dgla, softmax };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(const std::string& text);

// Architectural hyperparameters of the encoder, neck and decoder.
struct ModelConfig {
  Index c1 = 96;              // embedding channels
  Index depth = 10;           // total encoder blocks
  Index n_mbconv = 2;         // channel-interactive blocks; the rest use attention
  Index attn_dim = 64;        // projection width d of Q, K, V
  Index heads = 1;
  Index patch_size = 16;
  Index expansion_ratio = 2;  // MBConv and MLP hidden width = ratio * c1
  Index num_classes = 1;      // C2
  Index decoder_dim = 256;
  Index decoder_layers = 2;   // bidirectional cross-attention rounds
  Index mask_mlp_depth = 3;
  Index upsample_channels_1 = 64;
  Index upsample_channels_2 = 32;
  std::vector<Index> pool_kernels{5, 9, 13};
  AttentionKind attention = AttentionKind::dgla;
  std::uint64_t seed = 0;

  Index n_attention() const { return depth - n_mbconv; }
  Index hidden_channels() const { return c1 * expansion_ratio; }

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  void validate_input(Index height, Index width) const;

  static ModelConfig paper();
  static ModelConfig toy();
};

}  // namespace hrmedseg

#include "hrmedseg/config.hpp"

#include <stdexcept>

namespace hrmedseg {

std::string to_string(AttentionKind kind) { return kind == AttentionKind::dgla ? "dgla" : "softmax"; }

AttentionKind parse_attention_kind(const std::string& text) {
  if (text == "dgla") return AttentionKind::dgla;
  if (text == "softmax") return AttentionKind::softmax;
  throw std::invalid_argument("unknown attention kind '" + text + "' (expected dgla or softmax)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (c1 <= 0 || attn_dim <= 0 || patch_size <= 0 || num_classes <= 0 || decoder_dim <= 0)
    fail("extents must be positive");
  if (depth <= 0 || n_mbconv < 0 || n_mbconv > depth) fail("need 0 <= n_mbconv <= depth, depth > 0");
  if (expansion_ratio < 1) fail("expansion_ratio must be >= 1");
  if (heads <= 0 || attn_dim % heads != 0 || c1 % heads != 0) fail("heads must divide attn_dim and c1");
  if (decoder_layers < 0) fail("decoder_layers must be >= 0");
  if (decoder_dim % 4 != 0) fail("decoder_dim must be divisible by 4 for the positional encoding");
  if (mask_mlp_depth < 1 || upsample_channels_1 <= 0 || upsample_channels_2 <= 0) fail("mask head widths must be positive");
  for (Index k : pool_kernels)
    if (k <= 0 || k % 2 == 0) fail("pool kernels must be positive and odd, got " + std::to_string(k));
}

void ModelConfig::validate_input(Index height, Index width) const {
  if (height <= 0 || width <= 0 || height % patch_size != 0 || width % patch_size != 0)
    throw ShapeError("input " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by patch size " + std::to_string(patch_size));
}

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig cfg;
  cfg.c1 = 32;
  cfg.depth = 6;
  cfg.n_mbconv = 2;
  cfg.attn_dim = 32;
  // 8x8 token grid at 64^2; a 4x4 grid leaves the mask head 16-pixel blocks.
  cfg.patch_size = 8;
  // a second round with one query stalls training at this width
  cfg.decoder_layers = 1;
  return cfg;
}

}  // namespace hrmedseg

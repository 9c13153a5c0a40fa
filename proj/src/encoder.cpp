#include "hrmedseg/encoder.hpp"

#include <cmath>

namespace hrmedseg {

std::string encoder_block_prefix(Index block) { return "encoder.block" + std::to_string(block); }

template <typename Scalar>
MBConvWeights<Scalar> MBConvWeights<Scalar>::from(const ParamStore<Scalar>& store, const std::string& prefix) {
  return {store.get(prefix + ".expand.weight"), store.get(prefix + ".expand.bias"),
          store.get(prefix + ".dw.weight"),     store.get(prefix + ".dw.bias"),
          store.get(prefix + ".project.weight"), store.get(prefix + ".project.bias")};
}

template <typename Scalar>
DglaWeights<Scalar> DglaWeights<Scalar>::from(const ParamStore<Scalar>& store, const std::string& prefix) {
  return {store.get(prefix + ".w_q"),          store.get(prefix + ".w_k"),
          store.get(prefix + ".w_v"),          store.get(prefix + ".w_gate"),
          store.get(prefix + ".w_x"),          store.get(prefix + ".norm.gamma"),
          store.get(prefix + ".norm.beta"),    store.get(prefix + ".mlp.fc1.weight"),
          store.get(prefix + ".mlp.fc1.bias"), store.get(prefix + ".mlp.fc2.weight"),
          store.get(prefix + ".mlp.fc2.bias")};
}

template <typename Scalar>
void add_patch_embed_params(ParamStore<Scalar>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  const Index s = cfg.patch_size;
  store.lecun_normal("encoder.patch_embed.weight", {cfg.c1, 3, s, s}, 3 * s * s, rng);
  store.zeros("encoder.patch_embed.bias", {cfg.c1});
}

template <typename Scalar>
void add_mbconv_params(ParamStore<Scalar>& store, const std::string& prefix, const ModelConfig& cfg,
                       std::mt19937_64& rng) {
  const Index c = cfg.c1, hidden = cfg.hidden_channels();
  store.he_normal(prefix + ".expand.weight", {hidden, c, 1, 1}, c, rng);
  store.zeros(prefix + ".expand.bias", {hidden});
  store.he_normal(prefix + ".dw.weight", {hidden, 1, 3, 3}, 9, rng);
  store.zeros(prefix + ".dw.bias", {hidden});
  store.lecun_normal(prefix + ".project.weight", {c, hidden, 1, 1}, hidden, rng);
  store.zeros(prefix + ".project.bias", {c});
}

template <typename Scalar>
void add_dgla_params(ParamStore<Scalar>& store, const std::string& prefix, const ModelConfig& cfg,
                     std::mt19937_64& rng) {
  const Index c = cfg.c1, d = cfg.attn_dim, hidden = cfg.hidden_channels();
  store.lecun_normal(prefix + ".w_q", {c, d}, c, rng);
  store.lecun_normal(prefix + ".w_k", {c, d}, c, rng);
  store.lecun_normal(prefix + ".w_v", {c, d}, c, rng);
  store.lecun_normal(prefix + ".w_gate", {d, c}, d, rng);
  store.lecun_normal(prefix + ".w_x", {c, c}, c, rng);
  store.ones(prefix + ".norm.gamma", {c});
  store.zeros(prefix + ".norm.beta", {c});
  store.he_normal(prefix + ".mlp.fc1.weight", {c, hidden}, c, rng);
  store.zeros(prefix + ".mlp.fc1.bias", {hidden});
  store.lecun_normal(prefix + ".mlp.fc2.weight", {hidden, c}, hidden, rng);
  store.zeros(prefix + ".mlp.fc2.bias", {c});
}

template <typename Scalar>
void add_encoder_params(ParamStore<Scalar>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  add_patch_embed_params(store, cfg, rng);
  for (Index b = 0; b < cfg.depth; ++b) {
    if (b < cfg.n_mbconv) add_mbconv_params(store, encoder_block_prefix(b), cfg, rng);
    else add_dgla_params(store, encoder_block_prefix(b), cfg, rng);
  }
}

template <typename Scalar>
Tensor<Scalar> patch_embed(const Tensor<Scalar>& image, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                           Index patch_size) {
  if (image.ndim() != 4) throw ShapeError("patch_embed: expected B x 3 x H x W, got " + to_string(image.shape()));
  if (image.dim(2) % patch_size != 0 || image.dim(3) % patch_size != 0)
    throw ShapeError("patch_embed: image " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                     " not divisible by patch size " + std::to_string(patch_size));
  return conv2d(image, weight, bias, patch_size, 0);
}

template <typename Scalar>
Tensor<Scalar> mbconv_block(const Tensor<Scalar>& x, const MBConvWeights<Scalar>& w) {
  auto h = gelu(conv2d(x, w.expand_w, w.expand_b));
  h = gelu(depthwise_conv2d(h, w.dw_w, w.dw_b, 1, 1));
  h = conv2d(h, w.project_w, w.project_b);
  return gelu(add(h, x));
}

template <typename Scalar>
Tensor<Scalar> inter_gate(const Tensor<Scalar>& v, const Tensor<Scalar>& w_gate) {
  return matmul(silu(v), w_gate);
}

namespace {

void check_attention_operands(Index nq, Index dq, Index nk, Index dk, Index nv) {
  if (dq != dk) throw ShapeError("dgla: query/key widths differ");
  if (nq != nk || nk != nv) throw ShapeError("dgla: q, k and v must have the same token count");
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> dgla_weights(const Tensor<Scalar>& q, const Tensor<Scalar>& k) {
  const Index n = q.dim(0), d = q.dim(1);
  check_attention_operands(n, d, k.dim(0), k.dim(1), k.dim(0));
  NoGradGuard no_grad;
  auto pq = elu_plus_one(q), pk = elu_plus_one(k);
  auto qv = pq.data(), kv = pk.data();
  std::vector<Scalar> w(static_cast<std::size_t>(n * n));
  for (Index i = 0; i < n; ++i) {
    Scalar denom = 0;
    for (Index j = 0; j < n; ++j) {
      Scalar s = 0;
      for (Index c = 0; c < d; ++c) s += qv[i * d + c] * kv[j * d + c];
      w[i * n + j] = s;
      denom += s;
    }
    for (Index j = 0; j < n; ++j) w[i * n + j] /= denom;
  }
  return Tensor<Scalar>({n, n}, std::move(w));
}

template <typename Scalar>
Tensor<Scalar> dgla_naive(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v_gated) {
  const Index n = q.dim(0), d = q.dim(1), c = v_gated.dim(1);
  check_attention_operands(n, d, k.dim(0), k.dim(1), v_gated.dim(0));
  NoGradGuard no_grad;
  auto pq = elu_plus_one(q), pk = elu_plus_one(k);
  auto qv = pq.data(), kv = pk.data(), vv = v_gated.data();
  std::vector<Scalar> out(static_cast<std::size_t>(n * c), Scalar(0));
  std::vector<Scalar> sim(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Scalar denom = 0;
    for (Index j = 0; j < n; ++j) {
      Scalar s = 0;
      for (Index t = 0; t < d; ++t) s += qv[i * d + t] * kv[j * d + t];
      sim[j] = s;
      denom += s;
    }
    for (Index j = 0; j < n; ++j)
      for (Index t = 0; t < c; ++t) out[i * c + t] += sim[j] / denom * vv[j * c + t];
  }
  return Tensor<Scalar>({n, c}, std::move(out));
}

template <typename Scalar>
Tensor<Scalar> dgla_factored(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v_gated,
                             DglaStats* stats) {
  check_attention_operands(q.dim(0), q.dim(1), k.dim(0), k.dim(1), v_gated.dim(0));
  auto pq = elu_plus_one(q);
  auto pk = elu_plus_one(k);
  auto state = matmul(transpose(pk), v_gated);  // d x C
  auto z = sum_rows(pk);                        // 1 x d
  if (stats) stats->state_elements = state.size() + z.size();
  return div_rows(matmul(pq, state), matmul(pq, transpose(z)));
}

template <typename Scalar>
Tensor<Scalar> dgla_block(const Tensor<Scalar>& x, const DglaWeights<Scalar>& w, Index heads, AttentionKind kind) {
  if (x.ndim() != 2) throw ShapeError("dgla_block: expected N x C1 tokens, got " + to_string(x.shape()));
  auto q = matmul(x, w.w_q);
  auto k = matmul(x, w.w_k);
  auto v_gated = inter_gate(matmul(x, w.w_v), w.w_gate);

  auto attend = [kind](const Tensor<Scalar>& qh, const Tensor<Scalar>& kh, const Tensor<Scalar>& vh) {
    return kind == AttentionKind::dgla ? dgla_factored(qh, kh, vh) : softmax_attention(qh, kh, vh);
  };
  Tensor<Scalar> attended;
  if (heads == 1) {
    attended = attend(q, k, v_gated);
  } else {
    const Index dh = q.dim(1) / heads, ch = v_gated.dim(1) / heads;
    std::vector<Tensor<Scalar>> parts;
    for (Index h = 0; h < heads; ++h)
      parts.push_back(attend(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh), slice_cols(v_gated, h * ch, ch)));
    attended = concat_cols(parts);
  }

  auto gated = mul(silu(matmul(x, w.w_x)), attended);
  auto h = layer_norm(gated, w.norm_gamma, w.norm_beta);
  h = linear(gelu(linear(h, w.fc1_w, w.fc1_b)), w.fc2_w, w.fc2_b);
  return add(h, x);
}

template <typename Scalar>
Tensor<Scalar> encode(const Tensor<Scalar>& image, const ParamStore<Scalar>& store, const ModelConfig& cfg) {
  if (image.ndim() != 4 || image.dim(1) != 3)
    throw ShapeError("encode: expected B x 3 x H x W, got " + to_string(image.shape()));
  cfg.validate_input(image.dim(2), image.dim(3));
  auto x = patch_embed(image, store.get("encoder.patch_embed.weight"), store.get("encoder.patch_embed.bias"),
                       cfg.patch_size);
  for (Index b = 0; b < cfg.n_mbconv; ++b) x = mbconv_block(x, MBConvWeights<Scalar>::from(store, encoder_block_prefix(b)));
  if (cfg.n_attention() == 0) return x;

  std::vector<DglaWeights<Scalar>> blocks;
  for (Index b = cfg.n_mbconv; b < cfg.depth; ++b) blocks.push_back(DglaWeights<Scalar>::from(store, encoder_block_prefix(b)));
  const Index gh = x.dim(2), gw = x.dim(3);
  std::vector<Tensor<Scalar>> images;
  for (Index i = 0; i < x.dim(0); ++i) {
    auto tokens = spatial_to_tokens(slice_batch(x, i));
    for (const auto& w : blocks) tokens = dgla_block(tokens, w, cfg.heads, cfg.attention);
    images.push_back(tokens_to_spatial(tokens, gh, gw));
  }
  return images.size() == 1 ? images[0] : concat_batch(images);
}

#define HRMEDSEG_INSTANTIATE_ENCODER(S)                                                                      \
  template struct MBConvWeights<S>;                                                                         \
  template struct DglaWeights<S>;                                                                           \
  template void add_patch_embed_params(ParamStore<S>&, const ModelConfig&, std::mt19937_64&);               \
  template void add_mbconv_params(ParamStore<S>&, const std::string&, const ModelConfig&, std::mt19937_64&); \
  template void add_dgla_params(ParamStore<S>&, const std::string&, const ModelConfig&, std::mt19937_64&);   \
  template void add_encoder_params(ParamStore<S>&, const ModelConfig&, std::mt19937_64&);                   \
  template Tensor<S> patch_embed(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index);              \
  template Tensor<S> mbconv_block(const Tensor<S>&, const MBConvWeights<S>&);                               \
  template Tensor<S> inter_gate(const Tensor<S>&, const Tensor<S>&);                                        \
  template Tensor<S> dgla_weights(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> dgla_naive(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                      \
  template Tensor<S> dgla_factored(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, DglaStats*);       \
  template Tensor<S> dgla_block(const Tensor<S>&, const DglaWeights<S>&, Index, AttentionKind);             \
  template Tensor<S> encode(const Tensor<S>&, const ParamStore<S>&, const ModelConfig&);

HRMEDSEG_INSTANTIATE_ENCODER(float)
HRMEDSEG_INSTANTIATE_ENCODER(double)

#undef HRMEDSEG_INSTANTIATE_ENCODER

}  // namespace hrmedseg

#include "hrmedseg/decoder.hpp"

#include <cmath>

namespace hrmedseg {

template <typename Scalar>
NeckWeights<Scalar> NeckWeights<Scalar>::from(const ParamStore<Scalar>& store, const std::string& prefix) {
  return {store.get(prefix + ".conv1.weight"), store.get(prefix + ".conv1.bias"),
          store.get(prefix + ".conv2.weight"), store.get(prefix + ".conv2.bias")};
}

template <typename Scalar>
SelfAttentionWeights<Scalar> SelfAttentionWeights<Scalar>::from(const ParamStore<Scalar>& store,
                                                                const std::string& prefix) {
  return {store.get(prefix + ".w_q"), store.get(prefix + ".b_q"), store.get(prefix + ".w_k"),
          store.get(prefix + ".b_k"), store.get(prefix + ".w_v"), store.get(prefix + ".b_v")};
}

template <typename Scalar>
MaskHeadWeights<Scalar> MaskHeadWeights<Scalar>::from(const ParamStore<Scalar>& store, const std::string& prefix,
                                                      Index mlp_depth) {
  MaskHeadWeights w{store.get(prefix + ".up1.weight"), store.get(prefix + ".up1.bias"),
                    store.get(prefix + ".up2.weight"), store.get(prefix + ".up2.bias"), {}, {}};
  for (Index i = 0; i < mlp_depth; ++i) {
    const std::string layer = prefix + ".mlp.fc" + std::to_string(i + 1);
    w.mlp_w.push_back(store.get(layer + ".weight"));
    w.mlp_b.push_back(store.get(layer + ".bias"));
  }
  return w;
}

template <typename Scalar>
void add_neck_params(ParamStore<Scalar>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  const Index d = cfg.decoder_dim;
  store.lecun_normal("neck.conv1.weight", {d, cfg.c1, 1, 1}, cfg.c1, rng);
  store.zeros("neck.conv1.bias", {d});
  store.lecun_normal("neck.conv2.weight", {d, d, 3, 3}, d * 9, rng);
  store.zeros("neck.conv2.bias", {d});
}

template <typename Scalar>
void add_decoder_params(ParamStore<Scalar>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  const Index d = cfg.decoder_dim, u1 = cfg.upsample_channels_1, u2 = cfg.upsample_channels_2;
  store.normal("decoder.query_embed", {cfg.num_classes, d}, Scalar(1), rng);
  for (const char* p : {"q", "k", "v"}) {
    store.lecun_normal(std::string("decoder.self_attn.w_") + p, {d, d}, d, rng);
    store.zeros(std::string("decoder.self_attn.b_") + p, {d});
  }
  store.he_normal("decoder.mask_head.up1.weight", {d, u1, 2, 2}, d, rng);
  store.zeros("decoder.mask_head.up1.bias", {u1});
  store.he_normal("decoder.mask_head.up2.weight", {u1, u2, 2, 2}, u1, rng);
  store.zeros("decoder.mask_head.up2.bias", {u2});
  for (Index i = 0; i < cfg.mask_mlp_depth; ++i) {
    const std::string layer = "decoder.mask_head.mlp.fc" + std::to_string(i + 1);
    const Index out = i + 1 == cfg.mask_mlp_depth ? u2 : d;
    if (i + 1 < cfg.mask_mlp_depth) {
      store.he_normal(layer + ".weight", {d, out}, d, rng);
    } else {
      // zero hyperplanes: every initial mask is 0.5 and no pixel starts saturated
      store.zeros(layer + ".weight", {d, out});
    }
    store.zeros(layer + ".bias", {out});
  }
}

template <typename Scalar>
Tensor<Scalar> neck(const Tensor<Scalar>& h, const NeckWeights<Scalar>& w) {
  return conv2d(conv2d(h, w.conv1_w, w.conv1_b), w.conv2_w, w.conv2_b, 1, 1);
}

template <typename Scalar>
Tensor<Scalar> positional_encoding(Index h, Index w, Index dim) {
  if (h <= 0 || w <= 0) throw ShapeError("positional_encoding: grid must be nonempty");
  if (dim <= 0 || dim % 4 != 0) throw ShapeError("positional_encoding: dim must be a positive multiple of 4");
  const Index quarter = dim / 4;
  std::vector<Scalar> out(static_cast<std::size_t>(h * w * dim));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      Scalar* row = out.data() + (y * w + x) * dim;
      for (Index i = 0; i < quarter; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
        row[2 * i] = static_cast<Scalar>(std::sin(y * freq));
        row[2 * i + 1] = static_cast<Scalar>(std::cos(y * freq));
        row[dim / 2 + 2 * i] = static_cast<Scalar>(std::sin(x * freq));
        row[dim / 2 + 2 * i + 1] = static_cast<Scalar>(std::cos(x * freq));
      }
    }
  return Tensor<Scalar>({h * w, dim}, std::move(out));
}

template <typename Scalar>
Tensor<Scalar> multiscale_fuse(const Tensor<Scalar>& e, const std::vector<Index>& kernels) {
  for (Index k : kernels)
    if (k <= 0 || k % 2 == 0) throw std::invalid_argument("multiscale_fuse: kernel sizes must be odd, got " + std::to_string(k));
  if (kernels.empty()) return e;
  auto acc = e;
  for (Index k : kernels) acc = add(acc, avg_pool2d(e, k, 1, k / 2));
  return scale(acc, Scalar(1) / static_cast<Scalar>(kernels.size() + 1));
}

template <typename Scalar>
Tensor<Scalar> query_self_attention(const Tensor<Scalar>& q, const SelfAttentionWeights<Scalar>& w) {
  auto attn = softmax_attention(linear(q, w.w_q, w.b_q), linear(q, w.w_k, w.b_k), linear(q, w.w_v, w.b_v));
  return add(attn, q);
}

template <typename Scalar>
CrossAttentionState<Scalar> cross_attention_round(const Tensor<Scalar>& queries, const Tensor<Scalar>& image,
                                                  const Tensor<Scalar>& pos, Index h, Index w,
                                                  const std::vector<Index>& kernels) {
  if (image.shape() != pos.shape())
    throw ShapeError("cross_attention_round: embedding " + to_string(image.shape()) + " vs positional encoding " +
                     to_string(pos.shape()));
  if (queries.ndim() != 2 || queries.dim(1) != image.dim(1))
    throw ShapeError("cross_attention_round: query width does not match embedding width");
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(image.dim(1)));
  auto fused = spatial_to_tokens(multiscale_fuse(tokens_to_spatial(image, h, w), kernels));
  auto q = add(softmax_attention(queries, add(image, pos), fused, inv_sqrt_d), queries);
  auto e = add(softmax_attention(add(fused, pos), q, q, inv_sqrt_d), fused);
  return {q, e};
}

template <typename Scalar>
Tensor<Scalar> query_hyperplanes(const Tensor<Scalar>& queries, const MaskHeadWeights<Scalar>& w) {
  auto t = queries;
  for (std::size_t i = 0; i < w.mlp_w.size(); ++i) {
    t = linear(t, w.mlp_w[i], w.mlp_b[i]);
    if (i + 1 < w.mlp_w.size()) t = gelu(t);
  }
  return t;
}

template <typename Scalar>
Tensor<Scalar> mask_head(const Tensor<Scalar>& e, const Tensor<Scalar>& queries, Index out_h, Index out_w,
                         const MaskHeadWeights<Scalar>& w) {
  if (out_h <= 0 || out_w <= 0) throw ShapeError("mask_head: nonpositive target size");
  auto features = gelu(transpose_conv2d(e, w.up1_w, w.up1_b, 2));
  features = gelu(transpose_conv2d(features, w.up2_w, w.up2_b, 2));
  auto planes = query_hyperplanes(queries, w);
  auto kernel = reshape(planes, {planes.dim(0), planes.dim(1), 1, 1});
  return sigmoid(bilinear_resize(conv2d(features, kernel), out_h, out_w));
}

template <typename Scalar>
Tensor<Scalar> decode(const Tensor<Scalar>& embedding, const ParamStore<Scalar>& store, const ModelConfig& cfg,
                      Index out_h, Index out_w) {
  if (embedding.ndim() != 4 || embedding.dim(1) != cfg.c1)
    throw ShapeError("decode: expected B x " + std::to_string(cfg.c1) + " x h x w, got " +
                     to_string(embedding.shape()));
  const Index gh = embedding.dim(2), gw = embedding.dim(3);
  auto e_all = neck(embedding, NeckWeights<Scalar>::from(store));
  const auto attn = SelfAttentionWeights<Scalar>::from(store, "decoder.self_attn");
  const auto head = MaskHeadWeights<Scalar>::from(store, "decoder.mask_head", cfg.mask_mlp_depth);
  const auto pos = positional_encoding<Scalar>(gh, gw, cfg.decoder_dim);
  const auto q0 = query_self_attention(store.get("decoder.query_embed"), attn);

  std::vector<Tensor<Scalar>> masks;
  for (Index b = 0; b < embedding.dim(0); ++b) {
    CrossAttentionState<Scalar> state{q0, spatial_to_tokens(slice_batch(e_all, b))};
    for (Index r = 0; r < cfg.decoder_layers; ++r)
      state = cross_attention_round(state.queries, state.image, pos, gh, gw, cfg.pool_kernels);
    masks.push_back(mask_head(tokens_to_spatial(state.image, gh, gw), state.queries, out_h, out_w, head));
  }
  return masks.size() == 1 ? masks[0] : concat_batch(masks);
}

#define HRMEDSEG_INSTANTIATE_DECODER(S)                                                                         \
  template struct NeckWeights<S>;                                                                              \
  template struct SelfAttentionWeights<S>;                                                                     \
  template struct MaskHeadWeights<S>;                                                                          \
  template void add_neck_params(ParamStore<S>&, const ModelConfig&, std::mt19937_64&);                         \
  template void add_decoder_params(ParamStore<S>&, const ModelConfig&, std::mt19937_64&);                      \
  template Tensor<S> neck(const Tensor<S>&, const NeckWeights<S>&);                                            \
  template Tensor<S> positional_encoding(Index, Index, Index);                                                 \
  template Tensor<S> multiscale_fuse(const Tensor<S>&, const std::vector<Index>&);                             \
  template Tensor<S> query_self_attention(const Tensor<S>&, const SelfAttentionWeights<S>&);                   \
  template CrossAttentionState<S> cross_attention_round(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,  \
                                                        Index, Index, const std::vector<Index>&);              \
  template Tensor<S> query_hyperplanes(const Tensor<S>&, const MaskHeadWeights<S>&);                           \
  template Tensor<S> mask_head(const Tensor<S>&, const Tensor<S>&, Index, Index, const MaskHeadWeights<S>&);   \
  template Tensor<S> decode(const Tensor<S>&, const ParamStore<S>&, const ModelConfig&, Index, Index);

HRMEDSEG_INSTANTIATE_DECODER(float)
HRMEDSEG_INSTANTIATE_DECODER(double)

#undef HRMEDSEG_INSTANTIATE_DECODER

}  // namespace hrmedseg

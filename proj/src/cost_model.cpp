#include "hrmedseg/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hrmedseg {

namespace {

Count elements(const Shape& s) {
  Count n = 1;
  for (Index d : s) n *= d;
  return n;
}

}  // namespace

CostSchedule::CostSchedule(Count batch, Count element_bytes) : batch_(batch), element_bytes_(element_bytes) {
  if (batch <= 0 || element_bytes <= 0) throw std::invalid_argument("batch and element width must be positive");
}

CostSchedule::Id CostSchedule::input(const std::string& name, Shape shape) {
  return op(name, {}, std::move(shape), 0, 0);
}

CostSchedule::Id CostSchedule::op(const std::string& name, std::vector<Id> inputs, Shape out_shape, Count params,
                                  Count flops, bool batched, bool saves_inputs) {
  for (Id i : inputs)
    if (i < 0 || i >= static_cast<Id>(nodes_.size())) throw std::out_of_range("cost schedule: unknown input id");
  const Count factor = batched ? batch_ : 1;
  Node node;
  node.record = {name, params, flops * factor, elements(out_shape) * factor * element_bytes_};
  node.shape = std::move(out_shape);
  node.inputs = std::move(inputs);
  node.saves_inputs = saves_inputs;
  nodes_.push_back(std::move(node));
  return static_cast<Id>(nodes_.size() - 1);
}

CostSchedule::Id CostSchedule::sum(const std::string& name, std::vector<Id> inputs, Count flops_per_element) {
  const Shape s = shape(inputs.at(0));
  for (Id i : inputs)
    if (shape(i) != s) throw ShapeError("cost schedule: sum of mismatched shapes in " + name);
  return op(name, std::move(inputs), s, 0, flops_per_element * elements(s), true, false);
}

CostSchedule::Id CostSchedule::view(const std::string& name, Id in, Shape shape_out) {
  if (elements(shape_out) != elements(shape(in))) throw ShapeError("cost schedule: view changes size in " + name);
  const Id id = op(name, {in}, std::move(shape_out), 0, 0, true, false);
  nodes_.back().record.out_bytes = 0;
  nodes_.back().is_view = true;
  return id;
}

CostSchedule::Id CostSchedule::conv(const std::string& name, Id in, Index out_channels, Index k, Index stride,
                                    Index pad, bool bias) {
  const Shape& s = shape(in);
  const Index ho = (s[1] + 2 * pad - k) / stride + 1, wo = (s[2] + 2 * pad - k) / stride + 1;
  const Count params = k * k * s[0] * out_channels + (bias ? out_channels : 0);
  return op(name, {in}, {out_channels, ho, wo}, params, 2 * k * k * s[0] * out_channels * ho * wo);
}

CostSchedule::Id CostSchedule::depthwise_conv(const std::string& name, Id in, Index k, Index stride, Index pad,
                                              bool bias) {
  const Shape& s = shape(in);
  const Index ho = (s[1] + 2 * pad - k) / stride + 1, wo = (s[2] + 2 * pad - k) / stride + 1;
  const Count params = k * k * s[0] + (bias ? s[0] : 0);
  return op(name, {in}, {s[0], ho, wo}, params, 2 * k * k * s[0] * ho * wo);
}

CostSchedule::Id CostSchedule::transpose_conv(const std::string& name, Id in, Index out_channels, Index k,
                                              Index stride, bool bias) {
  const Shape& s = shape(in);
  const Index ho = (s[1] - 1) * stride + k, wo = (s[2] - 1) * stride + k;
  const Count params = k * k * s[0] * out_channels + (bias ? out_channels : 0);
  return op(name, {in}, {out_channels, ho, wo}, params, 2 * k * k * s[0] * out_channels * s[1] * s[2]);
}

CostSchedule::Id CostSchedule::pointwise(const std::string& name, std::vector<Id> inputs, Count flops_per_element) {
  const Shape s = shape(inputs.at(0));
  return op(name, std::move(inputs), s, 0, flops_per_element * elements(s));
}

CostSchedule::Id CostSchedule::avg_pool(const std::string& name, Id in, Index k) {
  const Shape s = shape(in);
  return op(name, {in}, s, 0, k * k * elements(s), true, false);
}

CostSchedule::Id CostSchedule::bilinear(const std::string& name, Id in, Index out_h, Index out_w) {
  const Shape s = shape(in);
  return op(name, {in}, {s[0], out_h, out_w}, 0, 8 * s[0] * out_h * out_w, true, false);
}

CostSchedule::Id CostSchedule::linear(const std::string& name, Id in, Index out_features, bool bias) {
  const Shape& s = shape(in);
  const Count params = s[1] * out_features + (bias ? out_features : 0);
  return op(name, {in}, {s[0], out_features}, params, 2 * s[0] * s[1] * out_features);
}

Count CostSchedule::total_params() const {
  Count n = 0;
  for (const auto& node : nodes_) n += node.record.params;
  return n;
}

Count CostSchedule::total_flops() const {
  Count n = 0;
  for (const auto& node : nodes_) n += node.record.flops;
  return n;
}

Count CostSchedule::peak_bytes(CostMode mode) const {
  const std::size_t n = nodes_.size();
  auto root = [&](std::size_t i) {
    while (nodes_[i].is_view) i = static_cast<std::size_t>(nodes_[i].inputs[0]);
    return i;
  };
  std::vector<std::size_t> last_use(n);
  std::vector<bool> keep(n, false);
  for (std::size_t i = 0; i < n; ++i) last_use[i] = i;
  for (std::size_t i = 0; i < n; ++i)
    for (Id in : nodes_[i].inputs) {
      const std::size_t r = root(static_cast<std::size_t>(in));
      last_use[r] = std::max(last_use[r], i);
      if (nodes_[i].saves_inputs) keep[r] = true;
    }
  if (n) keep[root(n - 1)] = true;
  if (mode == CostMode::training)
    for (std::size_t i = 0; i < n; ++i)
      if (keep[i]) last_use[i] = n - 1;
  std::vector<std::vector<std::size_t>> release(n);
  for (std::size_t i = 0; i < n; ++i) release[last_use[i]].push_back(i);
  Count live = 0, peak = 0;
  for (std::size_t t = 0; t < n; ++t) {
    live += nodes_[t].record.out_bytes;
    peak = std::max(peak, live);
    for (std::size_t j : release[t]) live -= nodes_[j].record.out_bytes;
  }
  const Count param_bytes = total_params() * element_bytes_;
  return peak + (mode == CostMode::training ? 2 : 1) * param_bytes;
}

CostReport CostSchedule::report(CostMode mode) const {
  CostReport r;
  for (const auto& node : nodes_) r.per_layer.push_back(node.record);
  r.params = total_params();
  r.flops = total_flops();
  r.peak_activation_bytes = peak_bytes(mode);
  return r;
}

Count dgla_attention_flops(Index tokens, Index dim, Index value_dim, Index heads) {
  const Count d = dim / heads, c = value_dim / heads;
  return heads * tokens * (2 * d + d + 4 * d * c + 2 * d + c);
}

Count softmax_attention_flops(Index queries, Index keys, Index dim, Index value_dim) {
  return static_cast<Count>(queries) * keys * (2 * dim + 1 + 3 + 2 * value_dim);
}

namespace {

using Id = CostSchedule::Id;

// Attention core over token matrices q (N x d), k (N x d), v (N x C).
Id attention_core(CostSchedule& s, const std::string& prefix, Id q, Id k, Id v, Index heads, AttentionKind kind,
                  bool batched = true) {
  const Index nq = s.shape(q)[0], nk = s.shape(k)[0], d = s.shape(q)[1], c = s.shape(v)[1];
  const Index dh = d / heads, ch = c / heads;
  std::vector<Id> outs;
  for (Index h = 0; h < heads; ++h) {
    const std::string p = heads == 1 ? prefix : prefix + ".head" + std::to_string(h);
    if (kind == AttentionKind::dgla) {
      const Id pq = s.op(p + ".phi_q", {q}, {nq, dh}, 0, nq * dh, batched);
      const Id pk = s.op(p + ".phi_k", {k}, {nk, dh}, 0, nk * dh, batched);
      const Id state = s.op(p + ".state", {pk, v}, {dh, ch}, 0, 2 * nk * dh * ch, batched);
      const Id z = s.op(p + ".normalizer", {pk}, {1, dh}, 0, nk * dh, batched);
      const Id num = s.op(p + ".numerator", {pq, state}, {nq, ch}, 0, 2 * nq * dh * ch, batched);
      const Id den = s.op(p + ".denominator", {pq, z}, {nq, 1}, 0, 2 * nq * dh, batched);
      outs.push_back(s.op(p + ".normalize", {num, den}, {nq, ch}, 0, nq * ch, batched));
    } else {
      const Id scores = s.op(p + ".scores", {q, k}, {nq, nk}, 0, 2 * nq * nk * dh, batched);
      const Id scaled = s.op(p + ".scale", {scores}, {nq, nk}, 0, nq * nk, batched, false);
      const Id probs = s.op(p + ".softmax", {scaled}, {nq, nk}, 0, 3 * nq * nk, batched);
      outs.push_back(s.op(p + ".weighted_sum", {probs, v}, {nq, ch}, 0, 2 * nq * nk * ch, batched));
    }
  }
  if (heads == 1) return outs[0];
  return s.op(prefix + ".concat", outs, {nq, c}, 0, 0, batched, false);
}

void add_encoder(CostSchedule& s, const ModelConfig& cfg, Id& x, Index height, Index width) {
  x = s.conv("encoder.patch_embed", x, cfg.c1, cfg.patch_size, cfg.patch_size, 0);
  const Index gh = height / cfg.patch_size, gw = width / cfg.patch_size, n = gh * gw;
  const Index hidden = cfg.hidden_channels();
  for (Index b = 0; b < cfg.n_mbconv; ++b) {
    const std::string p = "encoder.block" + std::to_string(b);
    Id h = s.conv(p + ".expand", x, hidden, 1, 1, 0);
    h = s.pointwise(p + ".gelu1", {h});
    h = s.depthwise_conv(p + ".dw", h, 3, 1, 1);
    h = s.pointwise(p + ".gelu2", {h});
    h = s.conv(p + ".project", h, cfg.c1, 1, 1, 0);
    h = s.sum(p + ".residual", {h, x});
    x = s.pointwise(p + ".gelu3", {h});
  }
  if (cfg.n_attention() == 0) return;
  Id t = s.view("encoder.to_tokens", x, {n, cfg.c1});
  for (Index b = cfg.n_mbconv; b < cfg.depth; ++b) {
    const std::string p = "encoder.block" + std::to_string(b);
    const Id q = s.linear(p + ".w_q", t, cfg.attn_dim, false);
    const Id k = s.linear(p + ".w_k", t, cfg.attn_dim, false);
    const Id v = s.linear(p + ".w_v", t, cfg.attn_dim, false);
    const Id v_act = s.pointwise(p + ".inter_gate.silu", {v});
    const Id v_gated = s.linear(p + ".w_gate", v_act, cfg.c1, false);
    const Id attended = attention_core(s, p + ".attention", q, k, v_gated, cfg.heads, cfg.attention);
    const Id g = s.linear(p + ".w_x", t, cfg.c1, false);
    const Id g_act = s.pointwise(p + ".exter_gate.silu", {g});
    const Id gated = s.pointwise(p + ".gate", {g_act, attended});
    Id h = s.op(p + ".norm", {gated}, s.shape(gated), 2 * cfg.c1, 5 * n * cfg.c1);
    h = s.linear(p + ".mlp.fc1", h, hidden, true);
    h = s.pointwise(p + ".mlp.gelu", {h});
    h = s.linear(p + ".mlp.fc2", h, cfg.c1, true);
    t = s.sum(p + ".residual", {h, t});
  }
  x = s.view("encoder.to_spatial", t, {cfg.c1, gh, gw});
}

void add_neck(CostSchedule& s, const ModelConfig& cfg, Id& x) {
  x = s.conv("neck.conv1", x, cfg.decoder_dim, 1, 1, 0);
  x = s.conv("neck.conv2", x, cfg.decoder_dim, 3, 1, 1);
}

void add_decoder(CostSchedule& s, const ModelConfig& cfg, Id e_spatial, Index out_h, Index out_w) {
  const Index d = cfg.decoder_dim, c2 = cfg.num_classes;
  const Index gh = s.shape(e_spatial)[1], gw = s.shape(e_spatial)[2], n = gh * gw;

  Id q = s.op("decoder.query_embed", {}, {c2, d}, c2 * d, 0, false);
  {
    const Id sq = s.op("decoder.self_attn.q", {q}, {c2, d}, d * d + d, 2 * c2 * d * d, false);
    const Id sk = s.op("decoder.self_attn.k", {q}, {c2, d}, d * d + d, 2 * c2 * d * d, false);
    const Id sv = s.op("decoder.self_attn.v", {q}, {c2, d}, d * d + d, 2 * c2 * d * d, false);
    const Id a = attention_core(s, "decoder.self_attn", sq, sk, sv, 1, AttentionKind::softmax, false);
    q = s.op("decoder.self_attn.residual", {a, q}, {c2, d}, 0, c2 * d, false, false);
  }
  const Id pos = s.op("decoder.positional_encoding", {}, {n, d}, 0, 0, false);
  Id e = s.view("decoder.to_tokens", e_spatial, {n, d});
  for (Index r = 0; r < cfg.decoder_layers; ++r) {
    const std::string p = "decoder.round" + std::to_string(r);
    Id fused = e;
    if (!cfg.pool_kernels.empty()) {
      std::vector<Id> branches{e};
      for (Index k : cfg.pool_kernels)
        branches.push_back(s.op(p + ".pool" + std::to_string(k), {e}, {n, d}, 0, k * k * n * d, true, false));
      const Id total = s.op(p + ".fuse_sum", branches, {n, d}, 0, static_cast<Count>(cfg.pool_kernels.size()) * n * d, true, false);
      fused = s.sum(p + ".fuse_mean", {total});
    }
    const Id keys = s.sum(p + ".keys", {e, pos});
    const Id qa = attention_core(s, p + ".to_image", q, keys, fused, 1, AttentionKind::softmax);
    q = s.sum(p + ".query_residual", {qa, q});
    const Id queries = s.sum(p + ".image_queries", {fused, pos});
    const Id ea = attention_core(s, p + ".to_queries", queries, q, q, 1, AttentionKind::softmax);
    e = s.sum(p + ".image_residual", {ea, fused});
  }
  Id f = s.view("decoder.to_spatial", e, {d, gh, gw});
  f = s.transpose_conv("decoder.mask_head.up1", f, cfg.upsample_channels_1, 2, 2);
  f = s.pointwise("decoder.mask_head.gelu1", {f});
  f = s.transpose_conv("decoder.mask_head.up2", f, cfg.upsample_channels_2, 2, 2);
  f = s.pointwise("decoder.mask_head.gelu2", {f});
  Id hq = q;
  for (Index i = 0; i < cfg.mask_mlp_depth; ++i) {
    const std::string p = "decoder.mask_head.mlp.fc" + std::to_string(i + 1);
    const Index out = i + 1 == cfg.mask_mlp_depth ? cfg.upsample_channels_2 : d;
    hq = s.op(p, {hq}, {c2, out}, d * out + out, 2 * c2 * d * out);
    if (i + 1 < cfg.mask_mlp_depth) hq = s.pointwise(p + ".gelu", {hq});
  }
  const Index fh = s.shape(f)[1], fw = s.shape(f)[2];
  Id logits = s.op("decoder.mask_head.logits", {f, hq}, {c2, fh, fw}, 0, 2 * cfg.upsample_channels_2 * c2 * fh * fw);
  logits = s.bilinear("decoder.mask_head.resize", logits, out_h, out_w);
  s.pointwise("decoder.mask_head.sigmoid", {logits});
}

}  // namespace

CostSchedule model_schedule(const ModelConfig& cfg, Index height, Index width, Count batch, Index out_h, Index out_w,
                            Count element_bytes) {
  cfg.validate();
  cfg.validate_input(height, width);
  CostSchedule s(batch, element_bytes);
  Id x = s.input("input", {3, height, width});
  add_encoder(s, cfg, x, height, width);
  add_neck(s, cfg, x);
  add_decoder(s, cfg, x, out_h, out_w);
  return s;
}

CostSchedule ushape_schedule(const ModelConfig& cfg, Index height, Index width, Count batch, Count element_bytes) {
  if (height % 8 != 0 || width % 8 != 0) throw ShapeError("U-shape reference needs sides divisible by 8");
  CostSchedule s(batch, element_bytes);
  Id x = s.input("input", {3, height, width});
  std::vector<Id> skips;
  for (int level = 0; level < 4; ++level) {
    const std::string p = "ushape.enc" + std::to_string(level);
    const Index ch = cfg.c1 << level;
    if (level > 0) {
      const Shape& in = s.shape(x);
      x = s.op(p + ".down", {x}, {in[0], in[1] / 2, in[2] / 2}, 0, 4 * in[0] * (in[1] / 2) * (in[2] / 2));
    }
    x = s.pointwise(p + ".gelu1", {s.conv(p + ".conv1", x, ch, 3, 1, 1)});
    x = s.pointwise(p + ".gelu2", {s.conv(p + ".conv2", x, ch, 3, 1, 1)});
    skips.push_back(x);
  }
  for (int level = 2; level >= 0; --level) {
    const std::string p = "ushape.dec" + std::to_string(level);
    const Index ch = cfg.c1 << level;
    x = s.transpose_conv(p + ".up", x, ch, 2, 2);
    const Shape& up = s.shape(x);
    x = s.op(p + ".concat", {x, skips[static_cast<std::size_t>(level)]}, {2 * ch, up[1], up[2]}, 0, 0, true, false);
    x = s.pointwise(p + ".gelu1", {s.conv(p + ".conv1", x, ch, 3, 1, 1)});
    x = s.pointwise(p + ".gelu2", {s.conv(p + ".conv2", x, ch, 3, 1, 1)});
  }
  x = s.conv("ushape.head", x, cfg.num_classes, 1, 1, 0);
  s.pointwise("ushape.sigmoid", {x});
  return s;
}

Count count_params(const ModelConfig& cfg) {
  const Index side = cfg.patch_size;
  return model_schedule(cfg, side, side, 1, side, side).total_params();
}

CostReport estimate(const ModelConfig& cfg, Index height, Index width, Count batch, CostMode mode,
                    Count element_bytes) {
  return model_schedule(cfg, height, width, batch, height, width, element_bytes).report(mode);
}

Count estimate_flops(const ModelConfig& cfg, Index height, Index width, Count batch) {
  return model_schedule(cfg, height, width, batch, height, width).total_flops();
}

Count estimate_peak_memory(const ModelConfig& cfg, Index height, Index width, Count batch, CostMode mode,
                           Count element_bytes) {
  return model_schedule(cfg, height, width, batch, height, width, element_bytes).peak_bytes(mode);
}

Count encoder_attention_flops(const ModelConfig& cfg, Index height, Index width) {
  const Index n = (height / cfg.patch_size) * (width / cfg.patch_size);
  const Count per_block = cfg.attention == AttentionKind::dgla
                              ? dgla_attention_flops(n, cfg.attn_dim, cfg.c1, cfg.heads)
                              : cfg.heads * softmax_attention_flops(n, n, cfg.attn_dim / cfg.heads, cfg.c1 / cfg.heads);
  return per_block * cfg.n_attention();
}

std::vector<ScalingRow> scaling_report(const ModelConfig& cfg, const std::vector<Index>& resolutions, Count batch,
                                       CostMode mode) {
  std::vector<ScalingRow> rows;
  for (Index r : resolutions) {
    ScalingRow row;
    row.height = row.width = r;
    row.model = estimate(cfg, r, r, batch, mode);
    for (const auto& layer : row.model.per_layer)
      if (layer.name.rfind("encoder.", 0) == 0) row.encoder_flops += layer.flops;
    ModelConfig linear = cfg, quadratic = cfg;
    linear.attention = AttentionKind::dgla;
    quadratic.attention = AttentionKind::softmax;
    row.dgla_attention_flops = encoder_attention_flops(linear, r, r);
    row.softmax_attention_flops = encoder_attention_flops(quadratic, r, r);
    row.ushape_peak_bytes = ushape_schedule(cfg, r, r, batch).peak_bytes(mode);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_count(double value) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  if (value >= 1e9) os << value / 1e9 << "G";
  else if (value >= 1e6) os << value / 1e6 << "M";
  else if (value >= 1e3) os << value / 1e3 << "K";
  else os << std::setprecision(0) << value;
  return os.str();
}

std::string format_bytes(double bytes) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  const double kib = 1024.0, mib = kib * 1024.0, gib = mib * 1024.0;
  if (bytes >= gib) os << bytes / gib << "GB";
  else if (bytes >= mib) os << bytes / mib << "MB";
  else if (bytes >= kib) os << bytes / kib << "KB";
  else os << std::setprecision(0) << bytes << "B";
  return os.str();
}

void write_report_text(std::ostream& os, const CostReport& report, const ModelConfig& cfg, Index height, Index width,
                       Count batch, CostMode mode) {
  std::size_t name_width = 5;
  for (const auto& l : report.per_layer) name_width = std::max(name_width, l.name.size());
  os << "cost report: " << height << "x" << width << ", batch " << batch << ", "
     << (mode == CostMode::training ? "training" : "inference") << " mode, c1=" << cfg.c1 << " depth=" << cfg.depth
     << " d=" << cfg.attn_dim << " attention=" << to_string(cfg.attention) << "\n\n";
  os << std::left << std::setw(static_cast<int>(name_width)) << "layer" << std::right << std::setw(14) << "params"
     << std::setw(18) << "flops" << std::setw(14) << "out_bytes" << "\n";
  for (const auto& l : report.per_layer)
    os << std::left << std::setw(static_cast<int>(name_width)) << l.name << std::right << std::setw(14) << l.params
       << std::setw(18) << l.flops << std::setw(14) << l.out_bytes << "\n";
  const double per_image_flops = static_cast<double>(report.flops) / static_cast<double>(batch);
  os << "\nparams: " << report.params << " (" << format_count(static_cast<double>(report.params)) << ")\n";
  os << "flops: " << report.flops << " (" << format_count(static_cast<double>(report.flops)) << ", "
     << format_count(per_image_flops) << " per image)\n";
  os << "peak: " << report.peak_activation_bytes << " bytes ("
     << format_bytes(static_cast<double>(report.peak_activation_bytes)) << ")\n";
  os << "\nreference figures for the full-size model at 1024x1024 (3.53M params, 9.39G FLOPs, 0.59GB):\n";
  os << std::fixed << std::setprecision(3);
  os << "  params ratio (estimate / reference): " << static_cast<double>(report.params) / PublishedAnchors::params
     << "\n";
  os << "  flops ratio per image:               " << per_image_flops / PublishedAnchors::flops << "\n";
  os << "  peak memory ratio:                   "
     << static_cast<double>(report.peak_activation_bytes) / PublishedAnchors::memory_bytes << "\n";
  os.unsetf(std::ios::floatfield);
  os << "  note: the reference depends on projection width, head count and decoder widths that are not\n"
        "  published; the gap above reflects those choices and the analytic memory model, and is not tuned away.\n";
}

void write_report_csv(std::ostream& os, const CostReport& report) {
  os << "layer,params,flops,out_bytes\n";
  for (const auto& l : report.per_layer) os << l.name << ',' << l.params << ',' << l.flops << ',' << l.out_bytes << '\n';
}

void write_scaling_text(std::ostream& os, const std::vector<ScalingRow>& rows) {
  os << std::setw(10) << "input" << std::setw(12) << "flops" << std::setw(12) << "enc_flops" << std::setw(12)
     << "dgla_attn" << std::setw(12) << "soft_attn" << std::setw(12) << "peak" << std::setw(12) << "ushape_peak"
     << std::setw(10) << "x_dgla" << std::setw(10) << "x_soft" << "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << std::setw(10) << (std::to_string(r.height) + "x" + std::to_string(r.width)) << std::setw(12)
       << format_count(static_cast<double>(r.model.flops)) << std::setw(12)
       << format_count(static_cast<double>(r.encoder_flops)) << std::setw(12)
       << format_count(static_cast<double>(r.dgla_attention_flops)) << std::setw(12)
       << format_count(static_cast<double>(r.softmax_attention_flops)) << std::setw(12)
       << format_bytes(static_cast<double>(r.model.peak_activation_bytes)) << std::setw(12)
       << format_bytes(static_cast<double>(r.ushape_peak_bytes));
    if (i > 0) {
      os << std::fixed << std::setprecision(3) << std::setw(10)
         << static_cast<double>(r.dgla_attention_flops) / static_cast<double>(rows[i - 1].dgla_attention_flops)
         << std::setw(10)
         << static_cast<double>(r.softmax_attention_flops) / static_cast<double>(rows[i - 1].softmax_attention_flops);
      os.unsetf(std::ios::floatfield);
    }
    os << "\n";
  }
}

}  // namespace hrmedseg

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "hrmedseg/cost_model.hpp"
#include "hrmedseg/model.hpp"

namespace hrmedseg {
namespace {

ModelConfig config_variant(int i) {
  ModelConfig cfg = ModelConfig::toy();
  switch (i) {
    case 0: break;
    case 1: cfg = ModelConfig::paper(); break;
    case 2: cfg.c1 = 16; cfg.depth = 4; cfg.n_mbconv = 1; cfg.attn_dim = 8; break;
    case 3: cfg.num_classes = 3; cfg.mask_mlp_depth = 2; cfg.decoder_dim = 64; break;
    case 4: cfg.heads = 2; cfg.expansion_ratio = 3; cfg.upsample_channels_1 = 16; cfg.upsample_channels_2 = 8; break;
    case 5: cfg.depth = 2; cfg.n_mbconv = 2; cfg.pool_kernels = {}; break;
    default: cfg.attention = AttentionKind::softmax; cfg.decoder_layers = 3; break;
  }
  return cfg;
}

// ---------------------------------------------------------------- primitives

TEST(CostSchedule, HandConvParamsAndFlops) {
  CostSchedule s(1, 4);
  const auto x = s.input("x", {16, 8, 8});
  s.conv("conv", x, 32, 3, 1, 1);
  EXPECT_EQ(s.total_params(), 4640);
  EXPECT_EQ(s.total_flops(), 589824);
}

TEST(CostSchedule, SingleConvPeakIsInputOutputAndParams) {
  CostSchedule s(1, 4);
  const auto x = s.input("x", {3, 8, 8});
  s.conv("conv", x, 4, 3, 1, 1);
  const Count params = 3 * 4 * 9 + 4;
  EXPECT_EQ(s.peak_bytes(CostMode::inference), (3 * 64 + 4 * 64 + params) * 4);
}

TEST(CostSchedule, DoublingBatchDoublesActivationsOnly) {
  auto peak = [](Count batch) {
    CostSchedule s(batch, 4);
    const auto x = s.input("x", {3, 8, 8});
    s.conv("conv", x, 4, 3, 1, 1);
    return s.peak_bytes(CostMode::inference);
  };
  const Count params_bytes = (3 * 4 * 9 + 4) * 4;
  EXPECT_EQ(peak(2) - params_bytes, 2 * (peak(1) - params_bytes));
  EXPECT_EQ(peak(8) - params_bytes, 8 * (peak(1) - params_bytes));
}

TEST(CostSchedule, DepthwiseFlopsAreDenseOverChannels) {
  const Index c = 24;
  CostSchedule dense(1, 4), dw(1, 4);
  dense.conv("c", dense.input("x", {c, 10, 10}), c, 3, 1, 1, false);
  dw.depthwise_conv("d", dw.input("x", {c, 10, 10}), 3, 1, 1, false);
  EXPECT_EQ(dw.total_flops() * c, dense.total_flops());
  EXPECT_EQ(dw.total_params() * c, dense.total_params());
}

TEST(CostSchedule, ViewsAreFree) {
  CostSchedule s(1, 4);
  const auto x = s.input("x", {4, 4, 4});
  s.view("tokens", x, {16, 4});
  EXPECT_EQ(s.total_flops(), 0);
  EXPECT_EQ(s.peak_bytes(CostMode::inference), 64 * 4);
}

TEST(CostSchedule, TrainingCountsGradientsAndSavedTensors) {
  CostSchedule s(1, 4);
  auto h = s.input("x", {8, 16, 16});
  for (int i = 0; i < 4; ++i) h = s.pointwise("gelu" + std::to_string(i), {s.conv("c" + std::to_string(i), h, 8, 3, 1, 1)});
  EXPECT_GT(s.peak_bytes(CostMode::training), s.peak_bytes(CostMode::inference) + s.total_params() * 4);
}

// ---------------------------------------------------------------- attention closed forms

TEST(AttentionFlops, DglaIsExactlyLinearInTokens) {
  for (Index n : {1, 7, 64, 1024, 4096})
    for (Index d : {8, 64}) {
      EXPECT_EQ(dgla_attention_flops(2 * n, d, 96), 2 * dgla_attention_flops(n, d, 96));
      EXPECT_EQ(dgla_attention_flops(2 * n, d, 96, 4), 2 * dgla_attention_flops(n, d, 96, 4));
    }
}

TEST(AttentionFlops, SoftmaxIsQuadraticAtLargeN) {
  for (Index n : {1024, 2048, 4096}) {
    const double r = double(softmax_attention_flops(2 * n, 2 * n, 64, 96)) / double(softmax_attention_flops(n, n, 64, 96));
    EXPECT_GE(r, 3.96);
    EXPECT_LE(r, 4.00);
  }
}

// ---------------------------------------------------------------- model accounting

TEST(CountParams, MatchesBuiltStoreForEveryVariant) {
  for (int i = 0; i < 7; ++i) {
    const auto cfg = config_variant(i);
    EXPECT_EQ(count_params(cfg), build_params<float>(cfg).element_count()) << i;
  }
}

TEST(CountParams, PoolingAddsNothing) {
  auto a = ModelConfig::paper(), b = ModelConfig::paper();
  b.pool_kernels.clear();
  EXPECT_EQ(count_params(a), count_params(b));
  EXPECT_EQ(estimate(a, 256, 256).params, estimate(b, 256, 256).params);
  EXPECT_GT(estimate(a, 256, 256).flops, estimate(b, 256, 256).flops);
}

TEST(CountParams, IndependentOfOutputResolution) {
  const auto cfg = ModelConfig::paper();
  EXPECT_EQ(model_schedule(cfg, 64, 64, 1, 64, 64).total_params(),
            model_schedule(cfg, 64, 64, 1, 1024, 1024).total_params());
}

TEST(Estimate, TotalsEqualPerLayerSums) {
  for (int i = 0; i < 7; ++i) {
    const auto r = estimate(config_variant(i), 128, 128, 2, CostMode::training);
    Count p = 0, f = 0;
    for (const auto& l : r.per_layer) {
      p += l.params;
      f += l.flops;
    }
    EXPECT_EQ(r.params, p) << i;
    EXPECT_EQ(r.flops, f) << i;
  }
}

TEST(Estimate, PropertyMonotoneInResolutionBatchWidthAndDepth) {
  const auto base = ModelConfig::toy();
  for (auto mode : {CostMode::inference, CostMode::training}) {
    Count prev_f = 0, prev_m = 0;
    for (Index s : {64, 128, 192, 256}) {
      const auto r = estimate(base, s, s, 1, mode);
      EXPECT_GE(r.flops, prev_f);
      EXPECT_GE(r.peak_activation_bytes, prev_m);
      prev_f = r.flops;
      prev_m = r.peak_activation_bytes;
    }
    EXPECT_LE(estimate(base, 64, 128, 1, mode).flops, estimate(base, 128, 128, 1, mode).flops);
    EXPECT_LE(estimate(base, 64, 64, 1, mode).peak_activation_bytes, estimate(base, 64, 64, 2, mode).peak_activation_bytes);
    auto wider = base, deeper = base;
    wider.c1 *= 2;
    deeper.depth += 2;
    for (const auto& cfg : {wider, deeper}) {
      EXPECT_LE(estimate(base, 64, 64, 2, mode).flops, estimate(cfg, 64, 64, 2, mode).flops);
      EXPECT_LE(estimate(base, 64, 64, 2, mode).peak_activation_bytes, estimate(cfg, 64, 64, 2, mode).peak_activation_bytes);
    }
  }
}

TEST(Estimate, WrappersAgreeWithReport) {
  const auto cfg = ModelConfig::toy();
  const auto r = estimate(cfg, 128, 128, 4, CostMode::training);
  EXPECT_EQ(estimate_flops(cfg, 128, 128, 4), r.flops);
  EXPECT_EQ(estimate_peak_memory(cfg, 128, 128, 4, CostMode::training), r.peak_activation_bytes);
}

// ---------------------------------------------------------------- scaling

TEST(Scaling, EncoderFlopsQuadrupleWithDglaAndAttentionGrowsSixteenfoldWithSoftmax) {
  auto cfg = ModelConfig::paper();
  const auto rows = scaling_report(cfg, {512, 1024}, 1, CostMode::inference);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].encoder_flops, 4 * rows[0].encoder_flops);
  EXPECT_EQ(rows[1].dgla_attention_flops, 4 * rows[0].dgla_attention_flops);
  const double soft = double(rows[1].softmax_attention_flops) / double(rows[0].softmax_attention_flops);
  EXPECT_NEAR(soft, 16.0, 0.16);
}

TEST(Scaling, UShapePeakExceedsThisModelAtHighResolution) {
  const auto cfg = ModelConfig::paper();
  const auto rows = scaling_report(cfg, {1024}, 16, CostMode::training);
  EXPECT_GT(rows[0].ushape_peak_bytes, rows[0].model.peak_activation_bytes);
}

TEST(Scaling, DoublingOutputGrowsPeakLessThanUShape) {
  const auto cfg = ModelConfig::paper();
  const auto model = [&](Index s) { return double(estimate_peak_memory(cfg, s, s, 1, CostMode::inference)); };
  const auto ushape = [&](Index s) { return double(ushape_schedule(cfg, s, s, 1).peak_bytes(CostMode::inference)); };
  EXPECT_LT(model(1024) / model(512), ushape(1024) / ushape(512));
}

// ---------------------------------------------------------------- output

TEST(Report, CsvHasHeaderAndOneRowPerLayer) {
  const auto r = estimate(ModelConfig::toy(), 64, 64);
  std::ostringstream os;
  write_report_csv(os, r);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "layer,params,flops,out_bytes");
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, r.per_layer.size());
}

TEST(Report, TextNamesTheAnchorsAndTheCaveat) {
  const auto cfg = ModelConfig::paper();
  const auto r = estimate(cfg, 1024, 1024, 16, CostMode::training);
  std::ostringstream os;
  write_report_text(os, r, cfg, 1024, 1024, 16, CostMode::training);
  const auto text = os.str();
  for (const char* key : {"params", "flops", "peak"}) EXPECT_NE(text.find(key), std::string::npos) << key;
  EXPECT_NE(text.find("3.53M"), std::string::npos);
  EXPECT_NE(text.find("not\n  published"), std::string::npos);
}

TEST(Report, Formatting) {
  EXPECT_EQ(format_count(3.53e6), "3.53M");
  EXPECT_EQ(format_count(9.39e9), "9.39G");
}

}  // namespace
}  // namespace hrmedseg

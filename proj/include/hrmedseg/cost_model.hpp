#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hrmedseg/config.hpp"

// Analytic parameter, FLOP and activation-memory accounting.
//
// Conventions:
//   * FLOPs are 2 x multiply-accumulates for convolutions, transpose
//     convolutions and matrix products; bias additions are not counted.
//   * Pointwise ops (activations, add, mul, scale) cost 1 per output element,
//     softmax 3, layer norm 5, bilinear interpolation 8, average pooling one
//     add per window cell.
//   * Peak memory is a liveness simulation over the linear op schedule. In
//     inference mode an activation lives from its producer to its last
//     consumer. In training mode an activation is additionally kept to the end
//     of the forward pass when some consumer needs it for its backward rule
//     (convolutions, products, nonlinearities); inputs of purely additive or
//     linear-resampling ops (sums, scaling, pooling, bilinear resize) are not.
//     Reshapes between token and grid layout are views and cost nothing.
//     Parameters always count, gradients count in training mode.
//     Allocator fragmentation, workspace buffers, optimizer moments and
//     backward-pass temporaries are not modelled.
//
// The U-shape reference is a 4-level encoder-decoder at widths C1, 2C1, 4C1,
// 8C1: two 3x3 conv + GELU per level, 2x2 average-pool downsampling, 2x2
// stride-2 transpose-conv upsampling, channel concatenation with the skip
// tensor, and a final 1x1 conv + sigmoid at full resolution.
namespace hrmedseg {

using Count = std::int64_t;

enum class CostMode { inference, training };

struct LayerRecord {
  std::string name;
  Count params = 0;
  Count flops = 0;
  Count out_bytes = 0;
};

struct CostReport {
  Count params = 0;
  Count flops = 0;
  Count peak_activation_bytes = 0;  // includes parameter (and gradient) bytes
  std::vector<LayerRecord> per_layer;
};

// Builder for a linear op schedule. Shapes are per sample; batched ops scale
// FLOPs and bytes by the batch size.
class CostSchedule {
 public:
  CostSchedule(Count batch, Count element_bytes);

  using Id = int;

  Id input(const std::string& name, Shape shape);
  // Generic op: output shape, parameter count, FLOPs per sample.
  // saves_inputs: the backward rule reads the inputs, so training mode keeps them.
  Id op(const std::string& name, std::vector<Id> inputs, Shape out_shape, Count params, Count flops,
        bool batched = true, bool saves_inputs = true);
  // Elementwise linear combination of same-shape inputs (add, scale).
  Id sum(const std::string& name, std::vector<Id> inputs, Count flops_per_element = 1);
  Id view(const std::string& name, Id in, Shape shape);

  Id conv(const std::string& name, Id in, Index out_channels, Index k, Index stride, Index pad, bool bias = true);
  Id depthwise_conv(const std::string& name, Id in, Index k, Index stride, Index pad, bool bias = true);
  Id transpose_conv(const std::string& name, Id in, Index out_channels, Index k, Index stride, bool bias = true);
  Id pointwise(const std::string& name, std::vector<Id> inputs, Count flops_per_element = 1);
  Id avg_pool(const std::string& name, Id in, Index k);
  Id bilinear(const std::string& name, Id in, Index out_h, Index out_w);
  // tokens x in -> tokens x out
  Id linear(const std::string& name, Id in, Index out_features, bool bias);

  const Shape& shape(Id id) const { return nodes_[static_cast<std::size_t>(id)].shape; }

  Count batch() const { return batch_; }
  Count element_bytes() const { return element_bytes_; }
  Count total_params() const;
  Count total_flops() const;
  Count peak_bytes(CostMode mode) const;
  CostReport report(CostMode mode) const;

 private:
  struct Node {
    LayerRecord record;
    Shape shape;
    std::vector<Id> inputs;
    bool saves_inputs = true;
    bool is_view = false;
  };
  Count batch_;
  Count element_bytes_;
  std::vector<Node> nodes_;
};

// Attention-core FLOPs (projections excluded).
//   dgla:    N (2d + d + 4 d C + 2d + C)   summed over heads
//   softmax: Nq Nk (2d + 1 + 3 + 2C)
Count dgla_attention_flops(Index tokens, Index dim, Index value_dim, Index heads = 1);
Count softmax_attention_flops(Index queries, Index keys, Index dim, Index value_dim);

CostSchedule model_schedule(const ModelConfig& cfg, Index height, Index width, Count batch, Index out_h, Index out_w,
                            Count element_bytes = 4);
CostSchedule ushape_schedule(const ModelConfig& cfg, Index height, Index width, Count batch,
                             Count element_bytes = 4);

Count count_params(const ModelConfig& cfg);
CostReport estimate(const ModelConfig& cfg, Index height, Index width, Count batch = 1,
                    CostMode mode = CostMode::inference, Count element_bytes = 4);
Count estimate_flops(const ModelConfig& cfg, Index height, Index width, Count batch = 1);
Count estimate_peak_memory(const ModelConfig& cfg, Index height, Index width, Count batch,
                           CostMode mode = CostMode::training, Count element_bytes = 4);
// Sum of attention-core FLOPs over the token blocks of the encoder.
Count encoder_attention_flops(const ModelConfig& cfg, Index height, Index width);

struct ScalingRow {
  Index height = 0, width = 0;
  CostReport model;
  Count encoder_flops = 0;
  Count dgla_attention_flops = 0;
  Count softmax_attention_flops = 0;
  Count ushape_peak_bytes = 0;
};

std::vector<ScalingRow> scaling_report(const ModelConfig& cfg, const std::vector<Index>& resolutions, Count batch,
                                       CostMode mode);

// Reference figures reported for the full-size model at 1024 x 1024.
struct PublishedAnchors {
  static constexpr double params = 3.53e6;
  static constexpr double flops = 9.39e9;
  static constexpr double memory_bytes = 0.59 * 1024.0 * 1024.0 * 1024.0;
};

void write_report_text(std::ostream& os, const CostReport& report, const ModelConfig& cfg, Index height, Index width,
                       Count batch, CostMode mode);
void write_report_csv(std::ostream& os, const CostReport& report);
void write_scaling_text(std::ostream& os, const std::vector<ScalingRow>& rows);

std::string format_count(double value);
std::string format_bytes(double bytes);

}  // namespace hrmedseg

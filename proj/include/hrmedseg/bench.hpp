#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "hrmedseg/cost_model.hpp"

namespace hrmedseg {

struct BenchRow {
  Index tokens = 0;
  double dgla_seconds = 0;     // best single call, dgla_factored
  double softmax_seconds = 0;  // best single call, softmax_attention
  Count dgla_flops = 0;
  Count softmax_flops = 0;
};

// Times forward-only f32 attention on random N x dim queries/keys and
// N x value_dim values for every N in `tokens`. Each timing repeats the call
// until `min_seconds` have elapsed (at least 3 calls) and keeps the fastest.
std::vector<BenchRow> bench_attention(const std::vector<Index>& tokens, Index dim = 32, Index value_dim = 32,
                                      std::uint64_t seed = 0, double min_seconds = 0.2);

// Measured time ratio between consecutive rows whose token counts double;
// NaN when the pair is not a doubling.
double dgla_time_ratio(const BenchRow& from, const BenchRow& to);
double softmax_time_ratio(const BenchRow& from, const BenchRow& to);

// N, times in ms, modelled FLOPs, and ratios to the previous row.
void write_bench_text(std::ostream& os, const std::vector<BenchRow>& rows);

}  // namespace hrmedseg

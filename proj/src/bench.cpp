#include "hrmedseg/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>

#include "hrmedseg/encoder.hpp"
#include "hrmedseg/ops.hpp"

namespace hrmedseg {

namespace {

template <typename F>
double best_time(F&& f, double min_seconds) {
  using Clock = std::chrono::steady_clock;
  double best = std::numeric_limits<double>::infinity(), total = 0;
  for (int calls = 0; calls < 3 || total < min_seconds; ++calls) {
    const auto t0 = Clock::now();
    f();
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    best = std::min(best, s);
    total += s;
  }
  return best;
}

double ratio(double a, double b) { return a > 0 ? b / a : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::vector<BenchRow> bench_attention(const std::vector<Index>& tokens, Index dim, Index value_dim,
                                      std::uint64_t seed, double min_seconds) {
  if (dim <= 0 || value_dim <= 0) throw std::invalid_argument("bench_attention: dimensions must be positive");
  NoGradGuard guard;
  std::mt19937_64 rng(seed);
  std::vector<BenchRow> rows;
  volatile float sink = 0;
  for (Index n : tokens) {
    if (n <= 0) throw std::invalid_argument("bench_attention: token counts must be positive, got " + std::to_string(n));
    const auto q = Tensor<float>::randn({n, dim}, rng, 1.0f);
    const auto k = Tensor<float>::randn({n, dim}, rng, 1.0f);
    const auto v = Tensor<float>::randn({n, value_dim}, rng, 1.0f);
    BenchRow row{n, 0, 0, dgla_attention_flops(n, dim, value_dim), softmax_attention_flops(n, n, dim, value_dim)};
    row.dgla_seconds = best_time([&] { sink = sink + dgla_factored(q, k, v).data()[0]; }, min_seconds);
    row.softmax_seconds = best_time([&] { sink = sink + softmax_attention(q, k, v).data()[0]; }, min_seconds);
    rows.push_back(row);
  }
  return rows;
}

double dgla_time_ratio(const BenchRow& from, const BenchRow& to) {
  if (to.tokens != 2 * from.tokens) return std::numeric_limits<double>::quiet_NaN();
  return ratio(from.dgla_seconds, to.dgla_seconds);
}

double softmax_time_ratio(const BenchRow& from, const BenchRow& to) {
  if (to.tokens != 2 * from.tokens) return std::numeric_limits<double>::quiet_NaN();
  return ratio(from.softmax_seconds, to.softmax_seconds);
}

void write_bench_text(std::ostream& os, const std::vector<BenchRow>& rows) {
  const auto flags = os.flags();
  os << std::setw(7) << "N" << std::setw(12) << "dgla ms" << std::setw(12) << "soft ms" << std::setw(12)
     << "dgla flops" << std::setw(12) << "soft flops" << std::setw(9) << "t_dgla" << std::setw(9) << "t_soft"
     << std::setw(9) << "f_dgla" << std::setw(9) << "f_soft" << '\n';
  os << std::fixed;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << std::setw(7) << r.tokens << std::setprecision(3) << std::setw(12) << r.dgla_seconds * 1e3 << std::setw(12)
       << r.softmax_seconds * 1e3 << std::setw(12) << format_count(static_cast<double>(r.dgla_flops)) << std::setw(12)
       << format_count(static_cast<double>(r.softmax_flops));
    if (i > 0) {
      const auto& p = rows[i - 1];
      os << std::setprecision(2) << std::setw(9) << ratio(p.dgla_seconds, r.dgla_seconds) << std::setw(9)
         << ratio(p.softmax_seconds, r.softmax_seconds) << std::setw(9)
         << ratio(static_cast<double>(p.dgla_flops), static_cast<double>(r.dgla_flops)) << std::setw(9)
         << ratio(static_cast<double>(p.softmax_flops), static_cast<double>(r.softmax_flops));
    }
    os << '\n';
  }
  os.flags(flags);
}

}  // namespace hrmedseg

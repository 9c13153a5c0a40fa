#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace hrmedseg {

inline constexpr double kGradTolF32 = 1e-3;
inline constexpr double kGradTolF64 = 1e-5;

// One finite-difference check, run in both precisions on the same shapes.
// In 64-bit the error is the worst norm-relative error over the inputs of the
// check. In 32-bit the difference quotient itself carries roughly
// 1e-7 |f| / h of rounding noise, which swamps inputs whose gradient is small
// next to |f| (the query and key projections of the linear attention), so the
// error is taken over the gradient of all inputs concatenated; the worst
// single input is kept for the report.
struct GradCheckEntry {
  std::string family;  // mbconv, dgla, neck, cross-attention, mask-head, losses, ops
  std::string check;
  double error_f32 = 0;
  double error_f64 = 0;
  double worst_input_f32 = 0;

  bool passed() const { return error_f32 < kGradTolF32 && error_f64 < kGradTolF64; }
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double seconds = 0;

  bool passed() const;
  std::vector<std::string> families() const;  // distinct, in order of first appearance
};

// Checks every block family at small shapes with inputs drawn from `seed`.
GradCheckReport gradcheck_all(std::uint64_t seed = 0);

void write_gradcheck_report(std::ostream& os, const GradCheckReport& report);

}  // namespace hrmedseg

#pragma once

#include <cstdint>
#include <vector>

#include "hrmedseg/tensor.hpp"

namespace hrmedseg {

// Frozen stand-in for a large pretrained image encoder: log2(stride) 3x3
// stride-2 convolutions 3 -> 32 -> 64 -> 128 ... -> out_channels with GELU
// between them, so a B x 3 x H x W batch maps to
// B x out_channels x H/stride x W/stride. Weights are drawn from `seed` and
// never require gradients.
struct TeacherSpec {
  std::uint64_t seed = 0;
  Index out_channels = 256;
  Index stride = 16;  // power of two >= 2
};

template <typename Scalar>
class Teacher {
 public:
  explicit Teacher(TeacherSpec spec);

  const TeacherSpec& spec() const { return spec_; }
  // Runs without recording a graph; the result is a detached leaf.
  Tensor<Scalar> features(const Tensor<Scalar>& images) const;

 private:
  TeacherSpec spec_;
  std::vector<Tensor<Scalar>> weights_, biases_;
};

extern template class Teacher<float>;
extern template class Teacher<double>;

}  // namespace hrmedseg

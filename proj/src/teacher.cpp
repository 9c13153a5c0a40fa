#include "hrmedseg/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <random>

#include "hrmedseg/ops.hpp"

namespace hrmedseg {

template <typename Scalar>
Teacher<Scalar>::Teacher(TeacherSpec spec) : spec_(spec) {
  if (spec.out_channels <= 0) throw std::invalid_argument("teacher: out_channels must be positive");
  if (spec.stride < 2 || (spec.stride & (spec.stride - 1)) != 0)
    throw std::invalid_argument("teacher: stride must be a power of two >= 2, got " + std::to_string(spec.stride));
  std::vector<Index> widths{3};
  for (Index s = spec.stride; s > 2; s /= 2) widths.push_back(std::min<Index>(32 << (widths.size() - 1), 128));
  widths.push_back(spec.out_channels);
  std::mt19937_64 rng(spec.seed ^ 0x7eac4e5ull);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const Index fan_in = widths[i] * 9;
    weights_.push_back(Tensor<Scalar>::randn({widths[i + 1], widths[i], 3, 3}, rng,
                                             static_cast<Scalar>(std::sqrt(2.0 / static_cast<double>(fan_in)))));
    biases_.push_back(Tensor<Scalar>::randn({widths[i + 1]}, rng, Scalar(0.1)));
  }
}

template <typename Scalar>
Tensor<Scalar> Teacher<Scalar>::features(const Tensor<Scalar>& images) const {
  if (images.ndim() != 4 || images.dim(1) != 3)
    throw ShapeError("teacher: expected B x 3 x H x W, got " + to_string(images.shape()));
  const Index s = spec_.stride;
  if (images.dim(2) % s != 0 || images.dim(3) % s != 0)
    throw ShapeError("teacher: spatial size must be divisible by " + std::to_string(s) + ", got " +
                     to_string(images.shape()));
  NoGradGuard guard;
  auto x = images.detach();
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    x = conv2d(x, weights_[i], biases_[i], 2, 1);
    if (i + 1 < weights_.size()) x = gelu(x);
  }
  return x.detach();
}

template class Teacher<float>;
template class Teacher<double>;

}  // namespace hrmedseg

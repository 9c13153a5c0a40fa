#pragma once

#include <functional>
#include <vector>

#include "hrmedseg/tensor.hpp"

namespace hrmedseg {

// Central-difference gradient of a scalar function:
//   five-point central difference (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h
//   along every element i.
// f is evaluated with gradient recording disabled.
template <typename Scalar>
Tensor<Scalar> finite_diff_grad(const std::function<Scalar(const Tensor<Scalar>&)>& f, const Tensor<Scalar>& x,
                                Scalar h = Scalar(1e-4));

// ||a - b|| / max(||a||, ||b||), zero when both vanish.
template <typename Scalar>
double relative_error(std::span<const Scalar> a, std::span<const Scalar> b);

struct GradCheckResult {
  std::vector<double> per_input;  // relative error per checked input
  double max_error = 0.0;         // worst of per_input
  double joint_error = 0.0;       // relative error of all input gradients concatenated
};

// Compares backward() against central differences for every input of a
// scalar-valued function. Inputs must be leaves; they are made to require
// gradients and perturbed in place, then restored.
template <typename Scalar>
GradCheckResult check_gradients(const std::function<Tensor<Scalar>(const std::vector<Tensor<Scalar>>&)>& f,
                                std::vector<Tensor<Scalar>> inputs, Scalar h);

// Default step per precision: large enough to stay above float rounding noise.
template <typename Scalar>
constexpr Scalar default_fd_step() {
  if constexpr (sizeof(Scalar) == sizeof(float)) return Scalar(1e-2);
  else return Scalar(1e-5);
}

}  // namespace hrmedseg

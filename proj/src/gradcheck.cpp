#include "hrmedseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hrmedseg {

namespace {

// (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h, truncation error O(h^4).
template <typename F, typename Scalar>
double five_point(F&& at, Scalar h) {
  const double f2 = at(Scalar(2) * h), f1 = at(h), m1 = at(-h), m2 = at(Scalar(-2) * h);
  const double step = static_cast<double>(h);
  return (-f2 + 8.0 * f1 - 8.0 * m1 + m2) / (12.0 * step);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> finite_diff_grad(const std::function<Scalar(const Tensor<Scalar>&)>& f, const Tensor<Scalar>& x,
                                Scalar h) {
  NoGradGuard no_grad;
  Tensor<Scalar> probe = x.detach();
  Tensor<Scalar> grad(x.shape());
  auto values = probe.mutable_data();
  auto out = grad.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Scalar saved = values[i];
    auto at = [&](Scalar offset) {
      values[i] = saved + offset;
      return static_cast<double>(f(probe));
    };
    out[i] = static_cast<Scalar>(five_point(at, h));
    values[i] = saved;
  }
  return grad;
}

template <typename Scalar>
double relative_error(std::span<const Scalar> a, std::span<const Scalar> b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    diff += (x - y) * (x - y);
    na += x * x;
    nb += y * y;
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

template <typename Scalar>
GradCheckResult check_gradients(const std::function<Tensor<Scalar>(const std::vector<Tensor<Scalar>>&)>& f,
                                std::vector<Tensor<Scalar>> inputs, Scalar h) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(f(inputs));

  GradCheckResult result;
  std::vector<Scalar> all_analytic, all_numeric;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const auto analytic = inputs[which].grad_tensor();
    auto values = inputs[which].mutable_data();
    std::vector<Scalar> numeric(values.size());
    {
      NoGradGuard no_grad;
      for (std::size_t i = 0; i < values.size(); ++i) {
        const Scalar saved = values[i];
        auto at = [&](Scalar offset) {
          values[i] = saved + offset;
          return static_cast<double>(f(inputs).item());
        };
        numeric[i] = static_cast<Scalar>(five_point(at, h));
        values[i] = saved;
      }
    }
    const double err = relative_error<Scalar>(analytic.data(), numeric);
    all_analytic.insert(all_analytic.end(), analytic.data().begin(), analytic.data().end());
    all_numeric.insert(all_numeric.end(), numeric.begin(), numeric.end());
    result.per_input.push_back(err);
    result.max_error = std::max(result.max_error, err);
  }
  result.joint_error = relative_error<Scalar>(all_analytic, all_numeric);
  for (auto& t : inputs) t.zero_grad();
  return result;
}

template Tensor<float> finite_diff_grad(const std::function<float(const Tensor<float>&)>&, const Tensor<float>&,
                                        float);
template Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>&,
                                         const Tensor<double>&, double);
template double relative_error(std::span<const float>, std::span<const float>);
template double relative_error(std::span<const double>, std::span<const double>);
template GradCheckResult check_gradients(
    const std::function<Tensor<float>(const std::vector<Tensor<float>>&)>&, std::vector<Tensor<float>>, float);
template GradCheckResult check_gradients(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>&, std::vector<Tensor<double>>, double);

}  // namespace hrmedseg

#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hrmedseg/tensor.hpp"

namespace hrmedseg {

// Named learnable tensors in creation order. Names are hierarchical
// ("encoder.block3.w_q") and unique.
template <typename Scalar>
class ParamStore {
 public:
  // Registers a leaf and marks it as requiring a gradient.
  Tensor<Scalar> add(const std::string& name, Tensor<Scalar> value);

  Tensor<Scalar> zeros(const std::string& name, Shape shape);
  Tensor<Scalar> ones(const std::string& name, Shape shape);
  // N(0, 2 / fan_in)
  Tensor<Scalar> he_normal(const std::string& name, Shape shape, Index fan_in, std::mt19937_64& rng);
  // N(0, 1 / fan_in), for layers not followed by a rectifying activation
  Tensor<Scalar> lecun_normal(const std::string& name, Shape shape, Index fan_in, std::mt19937_64& rng);
  Tensor<Scalar> normal(const std::string& name, Shape shape, Scalar stddev, std::mt19937_64& rng);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<Scalar>& get(const std::string& name) const;
  Tensor<Scalar>& get(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor<Scalar>>>& entries() const { return entries_; }
  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  Index element_count() const;
  Index element_count(const std::string& prefix) const;

  void zero_grad();
  // Copies values only; the stores must have identical names and shapes.
  void copy_values_from(const ParamStore& other);

  template <typename Other>
  ParamStore<Other> cast() const;

 private:
  std::vector<std::pair<std::string, Tensor<Scalar>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline bool has_prefix(const std::string& name, const std::string& prefix) {
  return name.compare(0, prefix.size(), prefix) == 0;
}

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace hrmedseg

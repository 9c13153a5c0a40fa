#include "hrmedseg/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace hrmedseg {

template <typename Scalar>
Tensor<Scalar> ParamStore<Scalar>::add(const std::string& name, Tensor<Scalar> value) {
  if (name.empty()) throw std::invalid_argument("parameter name must not be empty");
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, value);
  return value;
}

template <typename Scalar>
Tensor<Scalar> ParamStore<Scalar>::zeros(const std::string& name, Shape shape) {
  return add(name, Tensor<Scalar>::zeros(std::move(shape)));
}

template <typename Scalar>
Tensor<Scalar> ParamStore<Scalar>::ones(const std::string& name, Shape shape) {
  return add(name, Tensor<Scalar>::ones(std::move(shape)));
}

template <typename Scalar>
Tensor<Scalar> ParamStore<Scalar>::he_normal(const std::string& name, Shape shape, Index fan_in,
                                             std::mt19937_64& rng) {
  const Scalar stddev = static_cast<Scalar>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  return add(name, Tensor<Scalar>::randn(std::move(shape), rng, stddev));
}

template <typename Scalar>
Tensor<Scalar> ParamStore<Scalar>::lecun_normal(const std::string& name, Shape shape, Index fan_in,
                                                std::mt19937_64& rng) {
  const Scalar stddev = static_cast<Scalar>(std::sqrt(1.0 / static_cast<double>(fan_in)));
  return add(name, Tensor<Scalar>::randn(std::move(shape), rng, stddev));
}

template <typename Scalar>
Tensor<Scalar> ParamStore<Scalar>::normal(const std::string& name, Shape shape, Scalar stddev,
                                          std::mt19937_64& rng) {
  return add(name, Tensor<Scalar>::randn(std::move(shape), rng, stddev));
}

template <typename Scalar>
const Tensor<Scalar>& ParamStore<Scalar>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

template <typename Scalar>
Tensor<Scalar>& ParamStore<Scalar>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

template <typename Scalar>
std::vector<std::string> ParamStore<Scalar>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

template <typename Scalar>
std::vector<std::string> ParamStore<Scalar>::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_)
    if (has_prefix(name, prefix)) out.push_back(name);
  return out;
}

template <typename Scalar>
Index ParamStore<Scalar>::element_count() const {
  Index n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

template <typename Scalar>
Index ParamStore<Scalar>::element_count(const std::string& prefix) const {
  Index n = 0;
  for (const auto& [name, t] : entries_)
    if (has_prefix(name, prefix)) n += t.size();
  return n;
}

template <typename Scalar>
void ParamStore<Scalar>::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

template <typename Scalar>
void ParamStore<Scalar>::copy_values_from(const ParamStore& other) {
  if (other.size() != size()) throw std::invalid_argument("parameter stores differ in size");
  for (auto& [name, t] : entries_) {
    const auto& src = other.get(name);
    if (src.shape() != t.shape())
      throw ShapeError("parameter '" + name + "' shape " + to_string(t.shape()) + " vs " + to_string(src.shape()));
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  }
}

template <typename Scalar>
template <typename Other>
ParamStore<Other> ParamStore<Scalar>::cast() const {
  ParamStore<Other> out;
  for (const auto& [name, t] : entries_) {
    std::vector<Other> values(t.data().begin(), t.data().end());
    out.add(name, Tensor<Other>(t.shape(), std::move(values)));
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template ParamStore<double> ParamStore<float>::cast<double>() const;
template ParamStore<float> ParamStore<double>::cast<float>() const;

}  // namespace hrmedseg

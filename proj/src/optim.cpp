#include "hrmedseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace hrmedseg {

template <typename Scalar>
double grad_norm(const ParamStore<Scalar>& store, const ParamFilter& filter) {
  double total = 0;
  for (const auto& [name, t] : store.entries()) {
    if ((filter && !filter(name)) || !t.has_grad()) continue;
    for (Scalar g : t.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(total);
}

template <typename Scalar>
void adam_step(ParamStore<Scalar>& store, AdamState<Scalar>& state, const AdamConfig& config, double lr,
               const ParamFilter& filter) {
  if (!(lr > 0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  const auto& entries = store.entries();
  if (state.m.empty()) {
    for (const auto& [name, t] : entries) {
      state.m.emplace_back(static_cast<std::size_t>(t.size()), 0.0);
      state.v.emplace_back(static_cast<std::size_t>(t.size()), 0.0);
    }
  }
  if (state.m.size() != entries.size()) throw std::invalid_argument("adam_step: state does not match the store");

  double clip = 1.0;
  if (config.grad_clip > 0) {
    const double norm = grad_norm(store, filter);
    if (norm > config.grad_clip) clip = config.grad_clip / norm;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    const std::string& name = entries[p].first;
    Tensor<Scalar> t = entries[p].second;  // shares storage with the store
    if (filter && !filter(name)) continue;
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != static_cast<std::size_t>(t.size())) throw std::invalid_argument("adam_step: state size mismatch");
    const bool has_grad = t.has_grad();
    auto grad = has_grad ? t.grad() : std::span<const Scalar>{};
    auto value = t.mutable_data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = has_grad ? clip * static_cast<double>(grad[i]) : 0.0;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.eps);
      value[i] = static_cast<Scalar>(static_cast<double>(value[i]) - update);
    }
  }
}

template void adam_step(ParamStore<float>&, AdamState<float>&, const AdamConfig&, double, const ParamFilter&);
template void adam_step(ParamStore<double>&, AdamState<double>&, const AdamConfig&, double, const ParamFilter&);
template double grad_norm(const ParamStore<float>&, const ParamFilter&);
template double grad_norm(const ParamStore<double>&, const ParamFilter&);

}  // namespace hrmedseg

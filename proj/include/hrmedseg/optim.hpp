#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hrmedseg/param_store.hpp"

namespace hrmedseg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

// First and second moments per parameter, in store order.
template <typename Scalar>
struct AdamState {
  long step = 0;
  std::vector<std::vector<double>> m, v;
};

// Selects which parameters an update touches; empty means all.
using ParamFilter = std::function<bool(const std::string&)>;

// One bias-corrected Adam step using the gradients accumulated on the store's
// tensors (a parameter without a gradient is treated as having a zero one).
// Parameters rejected by `filter` are left untouched, moments included.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& store, AdamState<Scalar>& state, const AdamConfig& config, double lr,
               const ParamFilter& filter = {});

// Global L2 norm of the gradients of the selected parameters.
template <typename Scalar>
double grad_norm(const ParamStore<Scalar>& store, const ParamFilter& filter = {});

}  // namespace hrmedseg

#include "hrmedseg/model.hpp"

namespace hrmedseg {

template <typename Scalar>
ParamStore<Scalar> build_params(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  ParamStore<Scalar> store;
  add_encoder_params(store, config, rng);
  add_neck_params(store, config, rng);
  add_decoder_params(store, config, rng);
  return store;
}

template <typename Scalar>
Model<Scalar>::Model(ModelConfig config) : config_(std::move(config)), store_(build_params<Scalar>(config_)) {}

template <typename Scalar>
Model<Scalar>::Model(ModelConfig config, ParamStore<Scalar> store)
    : config_(std::move(config)), store_(std::move(store)) {
  config_.validate();
  const auto reference = build_params<Scalar>(config_);
  if (reference.size() != store_.size()) throw std::invalid_argument("parameter set does not match the model config");
  for (const auto& [name, t] : reference.entries()) {
    if (!store_.contains(name)) throw std::invalid_argument("missing parameter '" + name + "'");
    if (store_.get(name).shape() != t.shape())
      throw ShapeError("parameter '" + name + "' has shape " + to_string(store_.get(name).shape()) + ", expected " +
                       to_string(t.shape()));
  }
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::forward(const Tensor<Scalar>& images, Index out_h, Index out_w) const {
  return decode(encode(images, store_, config_), store_, config_, out_h, out_w);
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::aligned_features(const Tensor<Scalar>& images) const {
  return neck(encode(images, store_, config_), NeckWeights<Scalar>::from(store_));
}

template class Model<float>;
template class Model<double>;
template ParamStore<float> build_params(const ModelConfig&);
template ParamStore<double> build_params(const ModelConfig&);

}  // namespace hrmedseg

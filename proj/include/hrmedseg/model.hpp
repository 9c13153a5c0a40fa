#pragma once

#include "hrmedseg/config.hpp"
#include "hrmedseg/decoder.hpp"
#include "hrmedseg/encoder.hpp"
#include "hrmedseg/param_store.hpp"

namespace hrmedseg {

// Encoder, neck and decoder parameters under the prefixes "encoder.", "neck."
// and "decoder.". Parameters are created in a fixed order from one generator
// seeded with config.seed.
template <typename Scalar>
class Model {
 public:
  explicit Model(ModelConfig config);
  Model(ModelConfig config, ParamStore<Scalar> store);

  const ModelConfig& config() const { return config_; }
  const ParamStore<Scalar>& params() const { return store_; }
  ParamStore<Scalar>& params() { return store_; }

  // B x 3 x H x W -> B x C2 x out_h x out_w probabilities.
  Tensor<Scalar> forward(const Tensor<Scalar>& images, Index out_h, Index out_w) const;
  Tensor<Scalar> forward(const Tensor<Scalar>& images) const {
    return forward(images, images.dim(2), images.dim(3));
  }

  // Neck-aligned encoder features, B x decoder_dim x H/S x W/S.
  Tensor<Scalar> aligned_features(const Tensor<Scalar>& images) const;

 private:
  ModelConfig config_;
  ParamStore<Scalar> store_;
};

template <typename Scalar>
ParamStore<Scalar> build_params(const ModelConfig& config);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace hrmedseg

#pragma once

#include <cstdint>
#include <vector>

#include "hrmedseg/tensor.hpp"

namespace hrmedseg {

struct LossWeights {
  double w_dice = 1.0;
  double w_focal = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_smooth = 1.0;

  void validate() const;
};

inline constexpr double kFocalClamp = 1e-7;

// 1 - (2 sum(p t) + s) / (sum p + sum t + s), evaluated per (batch, class)
// plane of a B x C x ... tensor and averaged.
template <typename Scalar>
Tensor<Scalar> dice_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, Scalar smooth = Scalar(1));

// mean of -alpha (1 - p_t)^gamma log(p_t), p_t = p y + (1 - p)(1 - y), with p
// clamped to [1e-7, 1 - 1e-7] (zero gradient outside).
template <typename Scalar>
Tensor<Scalar> focal_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, Scalar alpha = Scalar(0.25),
                          Scalar gamma = Scalar(2));

template <typename Scalar>
Tensor<Scalar> seg_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, const LossWeights& weights);

// mean((student - teacher)^2)
template <typename Scalar>
Tensor<Scalar> distill_mse(const Tensor<Scalar>& student, const Tensor<Scalar>& teacher);

// Hard per-pixel class labels. For binary problems label 1 is foreground;
// otherwise labels index the C2 channels and label 0 is background.
struct LabelMap {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> labels;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// Thresholds at 0.5 when C2 == 1, otherwise argmax over channels. probs is
// C2 x H x W or 1 x C2 x H x W; `batch` selects the image of a 4-D tensor.
template <typename Scalar>
LabelMap hard_labels(const Tensor<Scalar>& probs, Index batch = 0);

// Foreground classes are {1} for binary maps and 1..C2-1 otherwise. Classes
// absent from both maps are skipped; if none remain the score is 1.
double dice_score(const LabelMap& pred, const LabelMap& target, Index num_classes);
double miou(const LabelMap& pred, const LabelMap& target, Index num_classes);

}  // namespace hrmedseg

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hrmedseg/losses.hpp"
#include "hrmedseg/tensor.hpp"

namespace hrmedseg {

// One image with its masks. Pixel data is stored planar (channel-major) in
// single precision and converted when batched.
struct Sample {
  std::string id;
  Index height = 0;
  Index width = 0;
  Index classes = 1;        // C2
  std::vector<float> image;  // 3 x H x W, values in [0, 1]
  std::vector<float> mask;   // C2 x H x W, values in {0, 1}

  // Hard labels of the mask (see hard_labels for the label convention).
  LabelMap labels() const;
  double foreground_fraction() const;
};

// Builds the C2 x H x W one-hot mask for a label map (binary when C2 == 1).
std::vector<float> one_hot_mask(const LabelMap& labels, Index classes);

// n images of size x size with 1 to 3 anti-aliased ellipses, rectangles or
// rings drawn over a textured noise background. Shape k gets a class drawn
// from 1..max(1, C2 - 1); later shapes cover earlier ones. Each sample is
// generated from its own stream derived from (seed, index), so any prefix of a
// dataset is itself a valid dataset.
std::vector<Sample> gen_shapes_dataset(Index n, Index size, Index classes, std::uint64_t seed);

// Stacks the selected samples into B x 3 x H x W and B x C2 x H x W tensors.
template <typename Scalar>
Tensor<Scalar> stack_images(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);
template <typename Scalar>
Tensor<Scalar> stack_masks(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);

// Seeded permutation split: the first ceil(fraction * n) shuffled indices are
// held out (at least one when n > 1).
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed);

}  // namespace hrmedseg

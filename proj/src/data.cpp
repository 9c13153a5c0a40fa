#include "hrmedseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace hrmedseg {

LabelMap Sample::labels() const {
  LabelMap out{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height * width), 0)};
  const Index plane = height * width;
  for (Index i = 0; i < plane; ++i) {
    if (classes == 1) {
      out.labels[i] = mask[i] > 0.5f ? 1 : 0;
      continue;
    }
    for (Index k = 0; k < classes; ++k)
      if (mask[k * plane + i] > 0.5f) out.labels[i] = static_cast<std::uint8_t>(k);
  }
  return out;
}

double Sample::foreground_fraction() const {
  const auto l = labels();
  const auto fg = std::count_if(l.labels.begin(), l.labels.end(), [](std::uint8_t v) { return v != 0; });
  return static_cast<double>(fg) / static_cast<double>(l.labels.size());
}

std::vector<float> one_hot_mask(const LabelMap& labels, Index classes) {
  if (classes < 1) throw std::invalid_argument("one_hot_mask: need at least one class");
  const Index plane = labels.height * labels.width;
  std::vector<float> mask(static_cast<std::size_t>(classes * plane), 0.0f);
  for (Index i = 0; i < plane; ++i) {
    const Index k = labels.labels[i];
    if (classes == 1) {
      if (k > 1) throw std::invalid_argument("one_hot_mask: label above 1 in a binary map");
      mask[i] = static_cast<float>(k);
    } else {
      if (k >= classes) throw std::invalid_argument("one_hot_mask: label " + std::to_string(k) + " out of range");
      mask[k * plane + i] = 1.0f;
    }
  }
  return mask;
}

namespace {

// Uniform draws from the raw engine output so the stream does not depend on
// the standard library's distribution implementations.
struct Stream {
  std::mt19937_64 engine;
  double unit() { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }
  double range(double lo, double hi) { return lo + (hi - lo) * unit(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(unit() * (hi - lo + 1)); }
};

enum class ShapeKind { ellipse, rectangle, ring };

struct Figure {
  ShapeKind kind;
  double cx, cy, rx, ry, angle, inner;
  int label;
  double color[3];

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
    switch (kind) {
      case ShapeKind::ellipse:
        return u * u + v * v <= 1.0;
      case ShapeKind::rectangle:
        return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
      case ShapeKind::ring: {
        const double r2 = u * u + v * v;
        return r2 <= 1.0 && r2 >= inner * inner;
      }
    }
    return false;
  }
};

constexpr int kSuper = 4;

}  // namespace

std::vector<Sample> gen_shapes_dataset(Index n, Index size, Index classes, std::uint64_t seed) {
  if (n < 0 || size < 8) throw std::invalid_argument("gen_shapes_dataset: need n >= 0 and size >= 8");
  if (classes < 1 || classes > 255) throw std::invalid_argument("gen_shapes_dataset: classes must be in 1..255");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  const Index plane = size * size;
  const double side = static_cast<double>(size);
  for (Index idx = 0; idx < n; ++idx) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(idx), 0x5eedu};
    Stream rng{std::mt19937_64(seq)};

    Sample s;
    s.id = "shape" + std::to_string(idx);
    s.height = s.width = size;
    s.classes = classes;
    s.image.assign(static_cast<std::size_t>(3 * plane), 0.0f);

    // background: tinted base level, two low-frequency waves and pixel noise
    const double base = rng.range(0.2, 0.5);
    double tint[3];
    for (double& t : tint) t = rng.range(-0.05, 0.05);
    double wave[2][3];
    for (auto& w : wave) {
      w[0] = rng.range(0.5, 3.0) * 2.0 * M_PI / side;
      w[1] = rng.range(0.0, 2.0 * M_PI);
      w[2] = rng.range(0.0, 2.0 * M_PI);
    }
    std::vector<double> bg(static_cast<std::size_t>(3 * plane));
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x) {
        double t = 0;
        for (const auto& w : wave) t += 0.05 * std::sin(w[0] * (std::cos(w[2]) * x + std::sin(w[2]) * y) + w[1]);
        for (int c = 0; c < 3; ++c) bg[c * plane + y * size + x] = base + tint[c] + t + rng.range(-0.04, 0.04);
      }

    std::vector<Figure> figures(static_cast<std::size_t>(rng.integer(1, 3)));
    for (auto& f : figures) {
      f.kind = static_cast<ShapeKind>(rng.integer(0, 2));
      f.cx = rng.range(0.2, 0.8) * side;
      f.cy = rng.range(0.2, 0.8) * side;
      f.rx = rng.range(0.1, 0.25) * side;
      f.ry = rng.range(0.1, 0.25) * side;
      f.angle = rng.range(0.0, M_PI);
      f.inner = rng.range(0.45, 0.65);
      f.label = classes <= 2 ? 1 : rng.integer(1, static_cast<int>(classes) - 1);
      const double level = base + (rng.unit() < 0.5 ? -1.0 : 1.0) * rng.range(0.25, 0.4);
      for (double& c : f.color) c = level + rng.range(-0.05, 0.05);
    }

    LabelMap labels{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(plane), 0)};
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x) {
        const Index p = y * size + x;
        double px[3] = {bg[p], bg[plane + p], bg[2 * plane + p]};
        for (const auto& f : figures) {
          int hits = 0;
          for (int sy = 0; sy < kSuper; ++sy)
            for (int sx = 0; sx < kSuper; ++sx)
              hits += f.contains(x + (sx + 0.5) / kSuper, y + (sy + 0.5) / kSuper);
          if (hits == 0) continue;
          const double cover = static_cast<double>(hits) / (kSuper * kSuper);
          for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - cover) + f.color[c] * cover;
          if (cover >= 0.5) labels.labels[p] = static_cast<std::uint8_t>(f.label);
        }
        const double grain = rng.range(-0.02, 0.02);
        for (int c = 0; c < 3; ++c) s.image[c * plane + p] = static_cast<float>(std::clamp(px[c] + grain, 0.0, 1.0));
      }
    s.mask = one_hot_mask(labels, classes);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

template <typename Scalar>
Tensor<Scalar> stack(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices, bool masks) {
  if (indices.empty()) throw std::invalid_argument("stack: empty selection");
  const Sample& first = samples.at(indices[0]);
  const Index channels = masks ? first.classes : 3;
  const Index per = channels * first.height * first.width;
  std::vector<Scalar> data;
  data.reserve(static_cast<std::size_t>(per) * indices.size());
  for (std::size_t i : indices) {
    const Sample& s = samples.at(i);
    if (s.height != first.height || s.width != first.width || s.classes != first.classes)
      throw ShapeError("stack: sample " + s.id + " differs in size or class count from " + first.id);
    const auto& src = masks ? s.mask : s.image;
    data.insert(data.end(), src.begin(), src.end());
  }
  return Tensor<Scalar>({static_cast<Index>(indices.size()), channels, first.height, first.width}, std::move(data));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> stack_images(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
  return stack<Scalar>(samples, indices, false);
}

template <typename Scalar>
Tensor<Scalar> stack_masks(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
  return stack<Scalar>(samples, indices, true);
}

Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
  if (val_fraction < 0 || val_fraction >= 1) throw std::invalid_argument("split_indices: fraction must be in [0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::size_t held = static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(n)));
  if (n > 1 && val_fraction > 0) held = std::clamp<std::size_t>(held, 1, n - 1);
  Split s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  return s;
}

template Tensor<float> stack_images(const std::vector<Sample>&, const std::vector<std::size_t>&);
template Tensor<double> stack_images(const std::vector<Sample>&, const std::vector<std::size_t>&);
template Tensor<float> stack_masks(const std::vector<Sample>&, const std::vector<std::size_t>&);
template Tensor<double> stack_masks(const std::vector<Sample>&, const std::vector<std::size_t>&);

}  // namespace hrmedseg

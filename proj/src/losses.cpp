#include "hrmedseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hrmedseg/ops.hpp"

namespace hrmedseg {

void LossWeights::validate() const {
  if (w_dice < 0 || w_focal < 0 || focal_alpha < 0 || focal_gamma < 0 || dice_smooth < 0)
    throw std::invalid_argument("loss weights must be nonnegative");
  if (w_dice + w_focal <= 0) throw std::invalid_argument("w_dice + w_focal must be positive");
}

namespace {

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// Number of independent planes a loss is averaged over.
Index plane_count(const Shape& s) {
  if (s.size() >= 3) return s[0] * s[1];
  return 1;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> dice_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, Scalar smooth) {
  require_same(pred.shape(), target.shape(), "dice_loss");
  const Index planes = plane_count(pred.shape());
  const Index n = pred.size() / planes;
  auto p = pred.data(), t = target.data();
  std::vector<Scalar> inter(planes), denom(planes);
  Scalar total = 0;
  for (Index k = 0; k < planes; ++k) {
    Scalar i = 0, sp = 0, st = 0;
    for (Index j = k * n; j < (k + 1) * n; ++j) {
      i += p[j] * t[j];
      sp += p[j];
      st += t[j];
    }
    inter[k] = i;
    denom[k] = sp + st + smooth;
    total += Scalar(1) - (Scalar(2) * i + smooth) / denom[k];
  }
  return make_result<Scalar>("dice_loss", {1}, {total / static_cast<Scalar>(planes)}, {pred, target},
                             [planes, n, smooth, inter, denom](auto& self) {
                               if (!self.input_needs_grad(0)) return;
                               auto g = self.input_grad(0);
                               auto tv = self.input_value(1);
                               const Scalar g0 = self.grad[0] / static_cast<Scalar>(planes);
                               for (Index k = 0; k < planes; ++k) {
                                 const Scalar num = Scalar(2) * inter[k] + smooth;
                                 const Scalar d2 = denom[k] * denom[k];
                                 for (Index j = k * n; j < (k + 1) * n; ++j)
                                   g[j] -= g0 * (Scalar(2) * tv[j] * denom[k] - num) / d2;
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> focal_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, Scalar alpha, Scalar gamma) {
  require_same(pred.shape(), target.shape(), "focal_loss");
  const Scalar eps = static_cast<Scalar>(kFocalClamp);
  auto p = pred.data(), t = target.data();
  Scalar total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Scalar pc = std::clamp(p[i], eps, Scalar(1) - eps);
    const Scalar pt = pc * t[i] + (Scalar(1) - pc) * (Scalar(1) - t[i]);
    total += -alpha * std::pow(Scalar(1) - pt, gamma) * std::log(pt);
  }
  const Scalar count = static_cast<Scalar>(p.size());
  return make_result<Scalar>("focal_loss", {1}, {total / count}, {pred, target}, [alpha, gamma, eps, count](auto& self) {
    if (!self.input_needs_grad(0)) return;
    auto g = self.input_grad(0);
    auto pv = self.input_value(0), tv = self.input_value(1);
    const Scalar g0 = self.grad[0] / count;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (pv[i] < eps || pv[i] > Scalar(1) - eps) continue;
      const Scalar pt = pv[i] * tv[i] + (Scalar(1) - pv[i]) * (Scalar(1) - tv[i]);
      const Scalar one_minus = Scalar(1) - pt;
      Scalar dpt = -alpha * std::pow(one_minus, gamma) / pt;
      if (gamma != Scalar(0)) dpt += alpha * gamma * std::pow(one_minus, gamma - Scalar(1)) * std::log(pt);
      g[i] += g0 * dpt * (Scalar(2) * tv[i] - Scalar(1));
    }
  });
}

template <typename Scalar>
Tensor<Scalar> seg_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, const LossWeights& weights) {
  weights.validate();
  const auto wd = static_cast<Scalar>(weights.w_dice), wf = static_cast<Scalar>(weights.w_focal);
  if (wf == Scalar(0)) return scale(dice_loss(pred, target, static_cast<Scalar>(weights.dice_smooth)), wd);
  auto focal = focal_loss(pred, target, static_cast<Scalar>(weights.focal_alpha),
                          static_cast<Scalar>(weights.focal_gamma));
  if (wd == Scalar(0)) return scale(focal, wf);
  return add(scale(dice_loss(pred, target, static_cast<Scalar>(weights.dice_smooth)), wd), scale(focal, wf));
}

template <typename Scalar>
Tensor<Scalar> distill_mse(const Tensor<Scalar>& student, const Tensor<Scalar>& teacher) {
  require_same(student.shape(), teacher.shape(), "distill_mse");
  auto s = student.data(), t = teacher.data();
  Scalar total = 0;
  for (std::size_t i = 0; i < s.size(); ++i) total += (s[i] - t[i]) * (s[i] - t[i]);
  const Scalar count = static_cast<Scalar>(s.size());
  return make_result<Scalar>("distill_mse", {1}, {total / count}, {student, teacher}, [count](auto& self) {
    auto sv = self.input_value(0), tv = self.input_value(1);
    const Scalar g0 = Scalar(2) * self.grad[0] / count;
    if (self.input_needs_grad(0)) {
      auto g = self.input_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * (sv[i] - tv[i]);
    }
    if (self.input_needs_grad(1)) {
      auto g = self.input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= g0 * (sv[i] - tv[i]);
    }
  });
}

template <typename Scalar>
LabelMap hard_labels(const Tensor<Scalar>& probs, Index batch) {
  Index c, h, w, offset = 0;
  if (probs.ndim() == 3) {
    c = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  } else if (probs.ndim() == 4) {
    if (batch < 0 || batch >= probs.dim(0)) throw std::out_of_range("hard_labels: batch index out of range");
    c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    offset = batch * c * h * w;
  } else {
    throw ShapeError("hard_labels: expected C x H x W or B x C x H x W, got " + to_string(probs.shape()));
  }
  if (c > 255) throw ShapeError("hard_labels: at most 255 classes");
  LabelMap out{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  auto v = probs.data().subspan(static_cast<std::size_t>(offset));
  for (Index i = 0; i < h * w; ++i) {
    if (c == 1) {
      out.labels[i] = v[i] > Scalar(0.5) ? 1 : 0;
      continue;
    }
    Index best = 0;
    for (Index k = 1; k < c; ++k)
      if (v[k * h * w + i] > v[best * h * w + i]) best = k;
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

namespace {

struct Overlap {
  double intersection = 0, pred = 0, target = 0;
};

std::vector<Overlap> class_overlaps(const LabelMap& pred, const LabelMap& target, Index num_classes) {
  if (pred.height != target.height || pred.width != target.width || pred.labels.size() != target.labels.size())
    throw ShapeError("label maps differ in size");
  const Index first = 1, last = num_classes == 1 ? 1 : num_classes - 1;
  std::vector<Overlap> out;
  for (Index c = first; c <= last; ++c) {
    Overlap o;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
      const bool p = pred.labels[i] == c, t = target.labels[i] == c;
      o.intersection += p && t;
      o.pred += p;
      o.target += t;
    }
    if (o.pred + o.target > 0) out.push_back(o);
  }
  return out;
}

}  // namespace

double dice_score(const LabelMap& pred, const LabelMap& target, Index num_classes) {
  const auto overlaps = class_overlaps(pred, target, num_classes);
  if (overlaps.empty()) return 1.0;
  double total = 0;
  for (const auto& o : overlaps) total += 2 * o.intersection / (o.pred + o.target);
  return total / static_cast<double>(overlaps.size());
}

double miou(const LabelMap& pred, const LabelMap& target, Index num_classes) {
  const auto overlaps = class_overlaps(pred, target, num_classes);
  if (overlaps.empty()) return 1.0;
  double total = 0;
  for (const auto& o : overlaps) total += o.intersection / (o.pred + o.target - o.intersection);
  return total / static_cast<double>(overlaps.size());
}

#define HRMEDSEG_INSTANTIATE_LOSSES(S)                                                   \
  template Tensor<S> dice_loss(const Tensor<S>&, const Tensor<S>&, S);                   \
  template Tensor<S> focal_loss(const Tensor<S>&, const Tensor<S>&, S, S);               \
  template Tensor<S> seg_loss(const Tensor<S>&, const Tensor<S>&, const LossWeights&);   \
  template Tensor<S> distill_mse(const Tensor<S>&, const Tensor<S>&);                    \
  template LabelMap hard_labels(const Tensor<S>&, Index);

HRMEDSEG_INSTANTIATE_LOSSES(float)
HRMEDSEG_INSTANTIATE_LOSSES(double)

#undef HRMEDSEG_INSTANTIATE_LOSSES

}  // namespace hrmedseg

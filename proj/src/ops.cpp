#include "hrmedseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace hrmedseg {

namespace {

template <typename Scalar>
using Vec = std::vector<Scalar>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

struct ImageDims {
  Index batch, channels, height, width;
};

template <typename Scalar>
ImageDims image_dims(const Tensor<Scalar>& x, const char* op) {
  require(x.ndim() == 4, std::string(op) + ": expected B x C x H x W, got " + to_string(x.shape()));
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

// Unfolds one image (C x H x W) into (C*k*k) x (Ho*Wo) columns.
template <typename Scalar>
void im2col(const Scalar* img, Index channels, Index h, Index w, Index k, Index stride, Index pad, Index ho,
            Index wo, Scalar* cols) {
  for (Index c = 0; c < channels; ++c)
    for (Index ki = 0; ki < k; ++ki)
      for (Index kj = 0; kj < k; ++kj) {
        Scalar* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride + ki - pad;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride + kj - pad;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? img[(c * h + iy) * w + ix] : Scalar(0);
          }
        }
      }
}

// Adjoint of im2col: scatters columns back, accumulating into img.
template <typename Scalar>
void col2im(const Scalar* cols, Index channels, Index h, Index w, Index k, Index stride, Index pad, Index ho,
            Index wo, Scalar* img) {
  for (Index c = 0; c < channels; ++c)
    for (Index ki = 0; ki < k; ++ki)
      for (Index kj = 0; kj < k; ++kj) {
        const Scalar* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < w) img[(c * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
}

// Kept inside the open interval: far tails would otherwise round to 0 or 1.
template <typename Scalar>
Scalar sigmoid_scalar(Scalar x) {
  constexpr Scalar lo = std::numeric_limits<Scalar>::min();
  const Scalar hi = std::nextafter(Scalar(1), Scalar(0));
  if (x >= 0) return std::min(Scalar(1) / (Scalar(1) + std::exp(-x)), hi);
  const Scalar e = std::exp(x);
  return std::max(e / (Scalar(1) + e), lo);
}

template <typename Scalar>
Scalar activate(Scalar x, Activation kind) {
  switch (kind) {
    case Activation::gelu:
      return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
    case Activation::silu:
      return x * sigmoid_scalar(x);
    case Activation::sigmoid:
      return sigmoid_scalar(x);
    case Activation::elu_plus_one:
      return x > 0 ? x + Scalar(1) : std::max(std::exp(x), std::numeric_limits<Scalar>::min());
    case Activation::relu:
      return x > 0 ? x : Scalar(0);
  }
  return x;
}

template <typename Scalar>
Scalar activate_derivative(Scalar x, Scalar y, Activation kind) {
  switch (kind) {
    case Activation::gelu: {
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
      const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Scalar> /
                         std::numbers::sqrt2_v<Scalar>;
      return cdf + x * pdf;
    }
    case Activation::silu: {
      const Scalar s = sigmoid_scalar(x);
      return s * (Scalar(1) + x * (Scalar(1) - s));
    }
    case Activation::sigmoid:
      return y * (Scalar(1) - y);
    case Activation::elu_plus_one:
      return x > 0 ? Scalar(1) : y;
    case Activation::relu:
      return x > 0 ? Scalar(1) : Scalar(0);
  }
  return Scalar(1);
}

const char* activation_name(Activation kind) {
  switch (kind) {
    case Activation::gelu: return "gelu";
    case Activation::silu: return "silu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::elu_plus_one: return "elu_plus_one";
    case Activation::relu: return "relu";
  }
  return "activation";
}

}  // namespace

Index conv_output_size(Index in, Index k, Index stride, Index pad) {
  if (stride <= 0) throw ShapeError("stride must be positive");
  const Index span = in + 2 * pad - k;
  if (span < 0) throw ShapeError("kernel larger than padded input");
  return span / stride + 1;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require(a.ndim() == 2 && b.ndim() == 2, "matmul: expected 2-D operands");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ " + to_string(a.shape()) + " * " + to_string(b.shape()));
  Vec<Scalar> out(static_cast<std::size_t>(m * n));
  MatrixMap<Scalar>(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_result<Scalar>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](auto& self) {
    ConstMatrixMap<Scalar> g(self.grad.data(), m, n);
    if (self.input_needs_grad(0)) {
      ConstMatrixMap<Scalar> bm(self.inputs[1]->value.data(), k, n);
      MatrixMap<Scalar>(self.input_grad(0).data(), m, k).noalias() += g * bm.transpose();
    }
    if (self.input_needs_grad(1)) {
      ConstMatrixMap<Scalar> am(self.inputs[0]->value.data(), m, k);
      MatrixMap<Scalar>(self.input_grad(1).data(), k, n).noalias() += am.transpose() * g;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  require(a.ndim() == 2, "transpose: expected a 2-D tensor");
  const Index m = a.dim(0), n = a.dim(1);
  Vec<Scalar> out(static_cast<std::size_t>(m * n));
  MatrixMap<Scalar>(out.data(), n, m) = a.matrix().transpose();
  return make_result<Scalar>("transpose", {n, m}, std::move(out), {a}, [m, n](auto& self) {
    MatrixMap<Scalar>(self.input_grad(0).data(), m, n) +=
        ConstMatrixMap<Scalar>(self.grad.data(), n, m).transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Vec<Scalar> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result<Scalar>("add", a.shape(), std::move(out), {a, b}, [](auto& self) {
    for (std::size_t in = 0; in < 2; ++in) {
      if (!self.input_needs_grad(in)) continue;
      auto g = self.input_grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Vec<Scalar> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_result<Scalar>("sub", a.shape(), std::move(out), {a, b}, [](auto& self) {
    if (self.input_needs_grad(0)) {
      auto g = self.input_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.input_needs_grad(1)) {
      auto g = self.input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Vec<Scalar> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_result<Scalar>("mul", a.shape(), std::move(out), {a, b}, [](auto& self) {
    for (std::size_t in = 0; in < 2; ++in) {
      if (!self.input_needs_grad(in)) continue;
      auto g = self.input_grad(in);
      auto other = self.input_value(1 - in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  Vec<Scalar> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result<Scalar>("scale", x.shape(), std::move(out), {x}, [factor](auto& self) {
    auto g = self.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, Scalar c) {
  Vec<Scalar> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += c;
  return make_result<Scalar>("add_scalar", x.shape(), std::move(out), {x}, [](auto& self) {
    auto g = self.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
  const Index c = x.dim(-1);
  require(bias.size() == c, "add_bias: bias length " + std::to_string(bias.size()) + " vs last axis " +
                                std::to_string(c));
  const Index rows = x.size() / c;
  Vec<Scalar> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (Index r = 0; r < rows; ++r)
    for (Index j = 0; j < c; ++j) out[static_cast<std::size_t>(r * c + j)] += bd[static_cast<std::size_t>(j)];
  return make_result<Scalar>("add_bias", x.shape(), std::move(out), {x, bias}, [rows, c](auto& self) {
    if (self.input_needs_grad(0)) {
      auto g = self.input_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.input_needs_grad(1)) {
      MatrixMap<Scalar>(self.input_grad(1).data(), 1, c) +=
          ConstMatrixMap<Scalar>(self.grad.data(), rows, c).colwise().sum();
    }
  });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias) {
  auto y = matmul(x, w);
  return bias.defined() ? add_bias(y, bias) : y;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Scalar total = 0;
  for (Scalar v : x.data()) total += v;
  return make_result<Scalar>("sum", {1}, {total}, {x}, [](auto& self) {
    const Scalar g0 = self.grad[0];
    for (auto& g : self.input_grad(0)) g += g0;
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  const Scalar n = static_cast<Scalar>(x.size());
  Scalar total = 0;
  for (Scalar v : x.data()) total += v;
  return make_result<Scalar>("mean", {1}, {total / n}, {x}, [n](auto& self) {
    const Scalar g0 = self.grad[0] / n;
    for (auto& g : self.input_grad(0)) g += g0;
  });
}

template <typename Scalar>
Tensor<Scalar> sum_rows(const Tensor<Scalar>& x) {
  require(x.ndim() == 2, "sum_rows: expected a 2-D tensor");
  const Index m = x.dim(0), n = x.dim(1);
  Vec<Scalar> out(static_cast<std::size_t>(n));
  MatrixMap<Scalar>(out.data(), 1, n) = x.matrix().colwise().sum();
  return make_result<Scalar>("sum_rows", {1, n}, std::move(out), {x}, [m, n](auto& self) {
    MatrixMap<Scalar>(self.input_grad(0).data(), m, n).rowwise() +=
        ConstMatrixMap<Scalar>(self.grad.data(), 1, n).row(0);
  });
}

template <typename Scalar>
Tensor<Scalar> div_rows(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require(a.ndim() == 2 && b.ndim() == 2 && b.dim(1) == 1 && b.dim(0) == a.dim(0),
          "div_rows: expected m x n and m x 1, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  Vec<Scalar> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) out[static_cast<std::size_t>(i * n + j)] /= bd[static_cast<std::size_t>(i)];
  return make_result<Scalar>("div_rows", {m, n}, std::move(out), {a, b}, [m, n](auto& self) {
    auto bv = self.input_value(1);
    if (self.input_needs_grad(0)) {
      auto g = self.input_grad(0);
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] / bv[i];
    }
    if (self.input_needs_grad(1)) {
      auto g = self.input_grad(1);
      for (Index i = 0; i < m; ++i) {
        Scalar acc = 0;
        for (Index j = 0; j < n; ++j) acc += self.grad[i * n + j] * self.value[i * n + j];
        g[i] -= acc / bv[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  Vec<Scalar> out(x.data().begin(), x.data().end());
  return make_result<Scalar>("reshape", std::move(shape), std::move(out), {x}, [](auto& self) {
    auto g = self.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename Scalar>
Tensor<Scalar> slice_batch(const Tensor<Scalar>& x, Index b) {
  require(x.ndim() >= 1 && b >= 0 && b < x.dim(0), "slice_batch: index out of range");
  const Index stride = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = 1;
  auto begin = x.data().begin() + b * stride;
  Vec<Scalar> out(begin, begin + stride);
  return make_result<Scalar>("slice_batch", std::move(shape), std::move(out), {x}, [b, stride](auto& self) {
    auto g = self.input_grad(0);
    for (Index i = 0; i < stride; ++i) g[b * stride + i] += self.grad[i];
  });
}

template <typename Scalar>
Tensor<Scalar> concat_batch(const std::vector<Tensor<Scalar>>& parts) {
  require(!parts.empty(), "concat_batch: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  Index rows = 0;
  Vec<Scalar> out;
  for (const auto& p : parts) {
    require(Shape(p.shape().begin() + 1, p.shape().end()) == tail, "concat_batch: trailing shape mismatch");
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape = parts[0].shape();
  shape[0] = rows;
  return make_result<Scalar>("concat_batch", std::move(shape), std::move(out), parts, [](auto& self) {
    std::size_t offset = 0;
    for (std::size_t in = 0; in < self.inputs.size(); ++in) {
      const std::size_t n = self.inputs[in]->value.size();
      if (self.input_needs_grad(in)) {
        auto g = self.input_grad(in);
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index begin, Index count) {
  require(x.ndim() == 2 && begin >= 0 && count > 0 && begin + count <= x.dim(1), "slice_cols: range out of bounds");
  const Index m = x.dim(0), n = x.dim(1);
  Vec<Scalar> out(static_cast<std::size_t>(m * count));
  MatrixMap<Scalar>(out.data(), m, count) = x.matrix().middleCols(begin, count);
  return make_result<Scalar>("slice_cols", {m, count}, std::move(out), {x}, [m, n, begin, count](auto& self) {
    MatrixMap<Scalar>(self.input_grad(0).data(), m, n).middleCols(begin, count) +=
        ConstMatrixMap<Scalar>(self.grad.data(), m, count);
  });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Index m = parts[0].dim(0);
  Index n = 0;
  for (const auto& p : parts) {
    require(p.ndim() == 2 && p.dim(0) == m, "concat_cols: row count mismatch");
    n += p.dim(1);
  }
  Vec<Scalar> out(static_cast<std::size_t>(m * n));
  MatrixMap<Scalar> om(out.data(), m, n);
  Index col = 0;
  for (const auto& p : parts) {
    om.middleCols(col, p.dim(1)) = p.matrix();
    col += p.dim(1);
  }
  return make_result<Scalar>("concat_cols", {m, n}, std::move(out), parts, [m, n](auto& self) {
    ConstMatrixMap<Scalar> g(self.grad.data(), m, n);
    Index col = 0;
    for (std::size_t in = 0; in < self.inputs.size(); ++in) {
      const Index w = self.inputs[in]->shape[1];
      if (self.input_needs_grad(in)) MatrixMap<Scalar>(self.input_grad(in).data(), m, w) += g.middleCols(col, w);
      col += w;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> spatial_to_tokens(const Tensor<Scalar>& x) {
  const auto d = image_dims(x, "spatial_to_tokens");
  require(d.batch == 1, "spatial_to_tokens: expects a single image");
  return transpose(reshape(x, {d.channels, d.height * d.width}));
}

template <typename Scalar>
Tensor<Scalar> tokens_to_spatial(const Tensor<Scalar>& t, Index h, Index w) {
  require(t.ndim() == 2 && t.dim(0) == h * w, "tokens_to_spatial: token count does not match grid");
  return reshape(transpose(t), {1, t.dim(1), h, w});
}

// ---------------------------------------------------------------------------
// Attention

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  require(x.ndim() == 2, "softmax_rows: expected a 2-D tensor");
  const Index m = x.dim(0), n = x.dim(1);
  Vec<Scalar> out(x.data().begin(), x.data().end());
  for (Index i = 0; i < m; ++i) {
    Scalar* row = out.data() + i * n;
    const Scalar mx = *std::max_element(row, row + n);
    Scalar total = 0;
    for (Index j = 0; j < n; ++j) total += (row[j] = std::exp(row[j] - mx));
    for (Index j = 0; j < n; ++j) row[j] /= total;
  }
  return make_result<Scalar>("softmax_rows", {m, n}, std::move(out), {x}, [m, n](auto& self) {
    auto g = self.input_grad(0);
    for (Index i = 0; i < m; ++i) {
      const Scalar* y = self.value.data() + i * n;
      const Scalar* gy = self.grad.data() + i * n;
      Scalar dot = 0;
      for (Index j = 0; j < n; ++j) dot += gy[j] * y[j];
      for (Index j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> softmax_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                 Scalar scale_factor) {
  require(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2, "softmax_attention: expected 2-D operands");
  require(q.dim(1) == k.dim(1), "softmax_attention: query/key width mismatch");
  require(k.dim(0) == v.dim(0), "softmax_attention: key/value count mismatch");
  if (scale_factor <= Scalar(0)) scale_factor = Scalar(1) / std::sqrt(static_cast<Scalar>(q.dim(1)));
  return matmul(softmax_rows(scale(matmul(q, transpose(k)), scale_factor)), v);
}

// ---------------------------------------------------------------------------
// Pointwise

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation kind) {
  Vec<Scalar> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = activate(v, kind);
  return make_result<Scalar>(activation_name(kind), x.shape(), std::move(out), {x}, [kind](auto& self) {
    auto g = self.input_grad(0);
    auto xv = self.input_value(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * activate_derivative(xv[i], self.value[i], kind);
  });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps) {
  const Index c = x.dim(-1);
  require(gamma.size() == c && beta.size() == c, "layer_norm: affine parameters must match the last axis");
  const Index rows = x.size() / c;
  Vec<Scalar> xhat(static_cast<std::size_t>(x.size()));
  Vec<Scalar> inv_std(static_cast<std::size_t>(rows));
  Vec<Scalar> out(static_cast<std::size_t>(x.size()));
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* row = xv.data() + r * c;
    Scalar mu = 0;
    for (Index j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<Scalar>(c);
    Scalar var = 0;
    for (Index j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Scalar>(c);
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (Index j = 0; j < c; ++j) {
      const Scalar h = (row[j] - mu) * inv;
      xhat[r * c + j] = h;
      out[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<Scalar>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](auto& self) {
        auto gamma_v = self.input_value(1);
        const Scalar* gy = self.grad.data();
        if (self.input_needs_grad(1)) {
          auto g = self.input_grad(1);
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < c; ++j) g[j] += gy[r * c + j] * xhat[r * c + j];
        }
        if (self.input_needs_grad(2)) {
          auto g = self.input_grad(2);
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < c; ++j) g[j] += gy[r * c + j];
        }
        if (self.input_needs_grad(0)) {
          auto g = self.input_grad(0);
          const Scalar cn = static_cast<Scalar>(c);
          for (Index r = 0; r < rows; ++r) {
            Scalar sum_d = 0, sum_dh = 0;
            for (Index j = 0; j < c; ++j) {
              const Scalar d = gy[r * c + j] * gamma_v[j];
              sum_d += d;
              sum_dh += d * xhat[r * c + j];
            }
            for (Index j = 0; j < c; ++j) {
              const Scalar d = gy[r * c + j] * gamma_v[j];
              g[r * c + j] += inv_std[r] / cn * (cn * d - sum_d - xhat[r * c + j] * sum_dh);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias, Index stride,
                      Index pad) {
  const auto d = image_dims(x, "conv2d");
  require(w.ndim() == 4 && w.dim(2) == w.dim(3), "conv2d: weight must be O x C x k x k");
  require(w.dim(1) == d.channels, "conv2d: channel mismatch, input has " + std::to_string(d.channels) +
                                      ", weight expects " + std::to_string(w.dim(1)));
  const Index out_c = w.dim(0), k = w.dim(2);
  require(!bias.defined() || bias.size() == out_c, "conv2d: bias length mismatch");
  const Index ho = conv_output_size(d.height, k, stride, pad);
  const Index wo = conv_output_size(d.width, k, stride, pad);
  require(ho > 0 && wo > 0, "conv2d: nonpositive output size");
  const Index patch = d.channels * k * k, plane = ho * wo;
  const bool pointwise = k == 1 && stride == 1 && pad == 0;

  Vec<Scalar> out(static_cast<std::size_t>(d.batch * out_c * plane));
  Vec<Scalar> cols(pointwise ? 0 : static_cast<std::size_t>(patch * plane));
  ConstMatrixMap<Scalar> wm(w.data().data(), out_c, patch);
  for (Index b = 0; b < d.batch; ++b) {
    const Scalar* img = x.data().data() + b * d.channels * d.height * d.width;
    if (!pointwise) im2col(img, d.channels, d.height, d.width, k, stride, pad, ho, wo, cols.data());
    ConstMatrixMap<Scalar> cm(pointwise ? img : cols.data(), patch, plane);
    MatrixMap<Scalar> om(out.data() + b * out_c * plane, out_c, plane);
    om.noalias() = wm * cm;
    if (bias.defined()) om.colwise() += Eigen::Map<const Eigen::Vector<Scalar, Eigen::Dynamic>>(bias.data().data(), out_c);
  }
  Tensor<Scalar> no_bias;
  return make_result<Scalar>(
      "conv2d", {d.batch, out_c, ho, wo}, std::move(out), {x, w, bias.defined() ? bias : no_bias},
      [d, out_c, k, stride, pad, ho, wo, patch, plane, pointwise, has_bias = bias.defined()](auto& self) {
        const bool need_x = self.input_needs_grad(0), need_w = self.input_needs_grad(1);
        const bool need_b = has_bias && self.input_needs_grad(2);
        ConstMatrixMap<Scalar> wm(self.inputs[1]->value.data(), out_c, patch);
        Vec<Scalar> cols(pointwise ? 0 : static_cast<std::size_t>(patch * plane));
        Vec<Scalar> dcols(static_cast<std::size_t>(patch * plane));
        for (Index b = 0; b < d.batch; ++b) {
          ConstMatrixMap<Scalar> gm(self.grad.data() + b * out_c * plane, out_c, plane);
          const Index img_size = d.channels * d.height * d.width;
          if (need_w) {
            const Scalar* img = self.inputs[0]->value.data() + b * img_size;
            if (!pointwise) im2col(img, d.channels, d.height, d.width, k, stride, pad, ho, wo, cols.data());
            ConstMatrixMap<Scalar> cm(pointwise ? img : cols.data(), patch, plane);
            MatrixMap<Scalar>(self.input_grad(1).data(), out_c, patch).noalias() += gm * cm.transpose();
          }
          if (need_b) {
            Eigen::Map<Eigen::Vector<Scalar, Eigen::Dynamic>>(self.input_grad(2).data(), out_c) +=
                gm.rowwise().sum();
          }
          if (need_x) {
            Scalar* gx = self.input_grad(0).data() + b * img_size;
            if (pointwise) {
              MatrixMap<Scalar>(gx, patch, plane).noalias() += wm.transpose() * gm;
            } else {
              MatrixMap<Scalar>(dcols.data(), patch, plane).noalias() = wm.transpose() * gm;
              col2im(dcols.data(), d.channels, d.height, d.width, k, stride, pad, ho, wo, gx);
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias,
                                Index stride, Index pad) {
  const auto d = image_dims(x, "depthwise_conv2d");
  require(w.ndim() == 4 && w.dim(1) == 1 && w.dim(2) == w.dim(3), "depthwise_conv2d: weight must be C x 1 x k x k");
  require(w.dim(0) == d.channels, "depthwise_conv2d: channel mismatch, input has " + std::to_string(d.channels) +
                                      ", weight has " + std::to_string(w.dim(0)));
  require(!bias.defined() || bias.size() == d.channels, "depthwise_conv2d: bias length mismatch");
  const Index k = w.dim(2);
  const Index ho = conv_output_size(d.height, k, stride, pad);
  const Index wo = conv_output_size(d.width, k, stride, pad);
  require(ho > 0 && wo > 0, "depthwise_conv2d: nonpositive output size");

  Vec<Scalar> out(static_cast<std::size_t>(d.batch * d.channels * ho * wo));
  auto xv = x.data();
  auto wv = w.data();
  for (Index b = 0; b < d.batch; ++b)
    for (Index c = 0; c < d.channels; ++c) {
      const Scalar* img = xv.data() + (b * d.channels + c) * d.height * d.width;
      const Scalar* ker = wv.data() + c * k * k;
      Scalar* o = out.data() + (b * d.channels + c) * ho * wo;
      const Scalar b0 = bias.defined() ? bias.data()[c] : Scalar(0);
      for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
          Scalar acc = b0;
          for (Index ki = 0; ki < k; ++ki) {
            const Index iy = oy * stride + ki - pad;
            if (iy < 0 || iy >= d.height) continue;
            for (Index kj = 0; kj < k; ++kj) {
              const Index ix = ox * stride + kj - pad;
              if (ix >= 0 && ix < d.width) acc += ker[ki * k + kj] * img[iy * d.width + ix];
            }
          }
          o[oy * wo + ox] = acc;
        }
    }
  Tensor<Scalar> no_bias;
  return make_result<Scalar>(
      "depthwise_conv2d", {d.batch, d.channels, ho, wo}, std::move(out), {x, w, bias.defined() ? bias : no_bias},
      [d, k, stride, pad, ho, wo, has_bias = bias.defined()](auto& self) {
        const bool need_x = self.input_needs_grad(0), need_w = self.input_needs_grad(1);
        const bool need_b = has_bias && self.input_needs_grad(2);
        auto xv = self.input_value(0);
        auto wv = self.input_value(1);
        Scalar* gx = need_x ? self.input_grad(0).data() : nullptr;
        Scalar* gw = need_w ? self.input_grad(1).data() : nullptr;
        Scalar* gb = need_b ? self.input_grad(2).data() : nullptr;
        for (Index b = 0; b < d.batch; ++b)
          for (Index c = 0; c < d.channels; ++c) {
            const Index img_off = (b * d.channels + c) * d.height * d.width;
            const Scalar* go = self.grad.data() + (b * d.channels + c) * ho * wo;
            for (Index oy = 0; oy < ho; ++oy)
              for (Index ox = 0; ox < wo; ++ox) {
                const Scalar g = go[oy * wo + ox];
                if (gb) gb[c] += g;
                for (Index ki = 0; ki < k; ++ki) {
                  const Index iy = oy * stride + ki - pad;
                  if (iy < 0 || iy >= d.height) continue;
                  for (Index kj = 0; kj < k; ++kj) {
                    const Index ix = ox * stride + kj - pad;
                    if (ix < 0 || ix >= d.width) continue;
                    const Index xi = img_off + iy * d.width + ix;
                    if (gw) gw[c * k * k + ki * k + kj] += g * xv[xi];
                    if (gx) gx[xi] += g * wv[c * k * k + ki * k + kj];
                  }
                }
              }
          }
      });
}

template <typename Scalar>
Tensor<Scalar> transpose_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias,
                                Index stride) {
  const auto d = image_dims(x, "transpose_conv2d");
  require(w.ndim() == 4 && w.dim(2) == w.dim(3), "transpose_conv2d: weight must be Cin x Cout x k x k");
  require(w.dim(0) == d.channels, "transpose_conv2d: channel mismatch, input has " + std::to_string(d.channels) +
                                      ", weight expects " + std::to_string(w.dim(0)));
  require(stride > 0, "transpose_conv2d: stride must be positive");
  const Index out_c = w.dim(1), k = w.dim(2);
  require(!bias.defined() || bias.size() == out_c, "transpose_conv2d: bias length mismatch");
  const Index ho = (d.height - 1) * stride + k, wo = (d.width - 1) * stride + k;
  const Index plane = d.height * d.width, patch = out_c * k * k;

  Vec<Scalar> out(static_cast<std::size_t>(d.batch * out_c * ho * wo), Scalar(0));
  Vec<Scalar> cols(static_cast<std::size_t>(patch * plane));
  ConstMatrixMap<Scalar> wm(w.data().data(), d.channels, patch);
  for (Index b = 0; b < d.batch; ++b) {
    ConstMatrixMap<Scalar> xm(x.data().data() + b * d.channels * plane, d.channels, plane);
    MatrixMap<Scalar>(cols.data(), patch, plane).noalias() = wm.transpose() * xm;
    Scalar* o = out.data() + b * out_c * ho * wo;
    col2im(cols.data(), out_c, ho, wo, k, stride, Index(0), d.height, d.width, o);
    if (bias.defined())
      for (Index c = 0; c < out_c; ++c)
        for (Index i = 0; i < ho * wo; ++i) o[c * ho * wo + i] += bias.data()[c];
  }
  Tensor<Scalar> no_bias;
  return make_result<Scalar>(
      "transpose_conv2d", {d.batch, out_c, ho, wo}, std::move(out), {x, w, bias.defined() ? bias : no_bias},
      [d, out_c, k, stride, ho, wo, plane, patch, has_bias = bias.defined()](auto& self) {
        const bool need_x = self.input_needs_grad(0), need_w = self.input_needs_grad(1);
        const bool need_b = has_bias && self.input_needs_grad(2);
        ConstMatrixMap<Scalar> wm(self.inputs[1]->value.data(), d.channels, patch);
        Vec<Scalar> dcols(static_cast<std::size_t>(patch * plane));
        for (Index b = 0; b < d.batch; ++b) {
          const Scalar* go = self.grad.data() + b * out_c * ho * wo;
          im2col(go, out_c, ho, wo, k, stride, Index(0), d.height, d.width, dcols.data());
          ConstMatrixMap<Scalar> dm(dcols.data(), patch, plane);
          if (need_x)
            MatrixMap<Scalar>(self.input_grad(0).data() + b * d.channels * plane, d.channels, plane).noalias() +=
                wm * dm;
          if (need_w) {
            ConstMatrixMap<Scalar> xm(self.inputs[0]->value.data() + b * d.channels * plane, d.channels, plane);
            MatrixMap<Scalar>(self.input_grad(1).data(), d.channels, patch).noalias() += xm * dm.transpose();
          }
          if (need_b) {
            auto gb = self.input_grad(2);
            for (Index c = 0; c < out_c; ++c)
              for (Index i = 0; i < ho * wo; ++i) gb[c] += go[c * ho * wo + i];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Resampling

template <typename Scalar>
Tensor<Scalar> avg_pool2d(const Tensor<Scalar>& x, Index k, Index stride, Index pad) {
  const auto d = image_dims(x, "avg_pool2d");
  require(k > 0, "avg_pool2d: kernel must be positive");
  if (pad < 0) pad = k / 2;
  const Index ho = conv_output_size(d.height, k, stride, pad);
  const Index wo = conv_output_size(d.width, k, stride, pad);
  const Index planes = d.batch * d.channels;
  Vec<Scalar> out(static_cast<std::size_t>(planes * ho * wo));
  auto xv = x.data();
  for (Index p = 0; p < planes; ++p) {
    const Scalar* img = xv.data() + p * d.height * d.width;
    for (Index oy = 0; oy < ho; ++oy) {
      const Index y0 = std::max<Index>(oy * stride - pad, 0), y1 = std::min(oy * stride - pad + k, d.height);
      for (Index ox = 0; ox < wo; ++ox) {
        const Index x0 = std::max<Index>(ox * stride - pad, 0), x1 = std::min(ox * stride - pad + k, d.width);
        Scalar acc = 0;
        for (Index iy = y0; iy < y1; ++iy)
          for (Index ix = x0; ix < x1; ++ix) acc += img[iy * d.width + ix];
        out[p * ho * wo + oy * wo + ox] = acc / static_cast<Scalar>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return make_result<Scalar>("avg_pool2d", {d.batch, d.channels, ho, wo}, std::move(out), {x},
                             [d, k, stride, pad, ho, wo, planes](auto& self) {
                               auto gx = self.input_grad(0);
                               for (Index p = 0; p < planes; ++p) {
                                 Scalar* gi = gx.data() + p * d.height * d.width;
                                 for (Index oy = 0; oy < ho; ++oy) {
                                   const Index y0 = std::max<Index>(oy * stride - pad, 0);
                                   const Index y1 = std::min(oy * stride - pad + k, d.height);
                                   for (Index ox = 0; ox < wo; ++ox) {
                                     const Index x0 = std::max<Index>(ox * stride - pad, 0);
                                     const Index x1 = std::min(ox * stride - pad + k, d.width);
                                     const Scalar g = self.grad[p * ho * wo + oy * wo + ox] /
                                                      static_cast<Scalar>((y1 - y0) * (x1 - x0));
                                     for (Index iy = y0; iy < y1; ++iy)
                                       for (Index ix = x0; ix < x1; ++ix) gi[iy * d.width + ix] += g;
                                   }
                                 }
                               }
                             });
}

namespace {

struct InterpTap {
  Index i0, i1;
  double w0, w1;
};

std::vector<InterpTap> interp_taps(Index in, Index out) {
  std::vector<InterpTap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    const Index i0 = std::min(static_cast<Index>(src), in - 1);
    const Index i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  const auto d = image_dims(x, "bilinear_resize");
  require(out_h > 0 && out_w > 0, "bilinear_resize: nonpositive target size");
  if (out_h == d.height && out_w == d.width) return reshape(x, x.shape());
  const auto ty = interp_taps(d.height, out_h);
  const auto tx = interp_taps(d.width, out_w);
  const Index planes = d.batch * d.channels;
  Vec<Scalar> out(static_cast<std::size_t>(planes * out_h * out_w));
  auto xv = x.data();
  for (Index p = 0; p < planes; ++p) {
    const Scalar* img = xv.data() + p * d.height * d.width;
    Scalar* o = out.data() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      for (Index ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const Scalar top = static_cast<Scalar>(b.w0) * img[a.i0 * d.width + b.i0] +
                           static_cast<Scalar>(b.w1) * img[a.i0 * d.width + b.i1];
        const Scalar bottom = static_cast<Scalar>(b.w0) * img[a.i1 * d.width + b.i0] +
                              static_cast<Scalar>(b.w1) * img[a.i1 * d.width + b.i1];
        o[oy * out_w + ox] = static_cast<Scalar>(a.w0) * top + static_cast<Scalar>(a.w1) * bottom;
      }
    }
  }
  return make_result<Scalar>("bilinear_resize", {d.batch, d.channels, out_h, out_w}, std::move(out), {x},
                             [d, out_h, out_w, planes, ty, tx](auto& self) {
                               auto gx = self.input_grad(0);
                               for (Index p = 0; p < planes; ++p) {
                                 Scalar* gi = gx.data() + p * d.height * d.width;
                                 const Scalar* go = self.grad.data() + p * out_h * out_w;
                                 for (Index oy = 0; oy < out_h; ++oy) {
                                   const auto& a = ty[oy];
                                   for (Index ox = 0; ox < out_w; ++ox) {
                                     const auto& b = tx[ox];
                                     const Scalar g = go[oy * out_w + ox];
                                     const Scalar ga0 = g * static_cast<Scalar>(a.w0);
                                     const Scalar ga1 = g * static_cast<Scalar>(a.w1);
                                     gi[a.i0 * d.width + b.i0] += ga0 * static_cast<Scalar>(b.w0);
                                     gi[a.i0 * d.width + b.i1] += ga0 * static_cast<Scalar>(b.w1);
                                     gi[a.i1 * d.width + b.i0] += ga1 * static_cast<Scalar>(b.w0);
                                     gi[a.i1 * d.width + b.i1] += ga1 * static_cast<Scalar>(b.w1);
                                   }
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------

#define HRMEDSEG_INSTANTIATE_OPS(S)                                                                     \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                       \
  template Tensor<S> transpose(const Tensor<S>&);                                                      \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                          \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                          \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                          \
  template Tensor<S> scale(const Tensor<S>&, S);                                                       \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                                  \
  template Tensor<S> add_bias(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                     \
  template Tensor<S> sum(const Tensor<S>&);                                                            \
  template Tensor<S> mean(const Tensor<S>&);                                                           \
  template Tensor<S> sum_rows(const Tensor<S>&);                                                       \
  template Tensor<S> div_rows(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                 \
  template Tensor<S> slice_batch(const Tensor<S>&, Index);                                             \
  template Tensor<S> concat_batch(const std::vector<Tensor<S>>&);                                      \
  template Tensor<S> slice_cols(const Tensor<S>&, Index, Index);                                       \
  template Tensor<S> concat_cols(const std::vector<Tensor<S>>&);                                       \
  template Tensor<S> spatial_to_tokens(const Tensor<S>&);                                              \
  template Tensor<S> tokens_to_spatial(const Tensor<S>&, Index, Index);                                \
  template Tensor<S> softmax_rows(const Tensor<S>&);                                                   \
  template Tensor<S> softmax_attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);       \
  template Tensor<S> activation(const Tensor<S>&, Activation);                                         \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);              \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index);       \
  template Tensor<S> depthwise_conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index); \
  template Tensor<S> transpose_conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index);    \
  template Tensor<S> avg_pool2d(const Tensor<S>&, Index, Index, Index);                                \
  template Tensor<S> bilinear_resize(const Tensor<S>&, Index, Index);

HRMEDSEG_INSTANTIATE_OPS(float)
HRMEDSEG_INSTANTIATE_OPS(double)

#undef HRMEDSEG_INSTANTIATE_OPS

}  // namespace hrmedseg

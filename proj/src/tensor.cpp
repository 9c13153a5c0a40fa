#include "hrmedseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hrmedseg {

namespace {
thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_sequence{0};
}  // namespace

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("nonpositive extent in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::uint64_t detail::next_sequence() { return g_sequence.fetch_add(1, std::memory_order_relaxed); }

template <typename Scalar>
bool all_finite(std::span<const Scalar> values) {
  return std::all_of(values.begin(), values.end(), [](Scalar v) { return std::isfinite(v); });
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill, bool requires_grad) : node_(std::make_shared<NodeType>()) {
  const Index n = numel(shape);
  node_->shape = std::move(shape);
  node_->value.assign(static_cast<std::size_t>(n), fill);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad)
    : node_(std::make_shared<NodeType>()) {
  const Index n = numel(shape);
  if (static_cast<Index>(data.size()) != n)
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + to_string(shape));
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_matrix(const RowMatrix<Scalar>& m) {
  std::vector<Scalar> data(m.data(), m.data() + m.size());
  return Tensor(Shape{m.rows(), m.cols()}, std::move(data));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::randn(Shape shape, std::mt19937_64& rng, Scalar stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.node_->value) v = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::uniform(Shape shape, std::mt19937_64& rng, Scalar lo, Scalar hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.node_->value) v = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) throw ShapeError("axis out of range for shape " + to_string(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::mutable_data() {
  if (!node_->is_leaf()) throw std::logic_error("in-place write to a recorded result");
  return node_->value;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> idx) const {
  if (static_cast<int>(idx.size()) != ndim()) throw ShapeError("index rank mismatch for " + to_string(shape()));
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : idx) {
    const Index extent = node_->shape[axis++];
    if (i < 0 || i >= extent) throw std::out_of_range("tensor index out of range");
    flat = flat * extent + i;
  }
  return node_->value[static_cast<std::size_t>(flat)];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw std::logic_error("requires_grad can only be set on leaves");
  node_->requires_grad = on;
  return *this;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::grad_tensor() const {
  if (!has_grad()) return Tensor(shape(), Scalar(0));
  return Tensor(shape(), node_->grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(node_->shape, node_->value);
}

template <typename Scalar>
ConstMatrixMap<Scalar> Tensor<Scalar>::matrix() const {
  if (ndim() != 2) throw ShapeError("expected a 2-D tensor, got " + to_string(shape()));
  return ConstMatrixMap<Scalar>(node_->value.data(), node_->shape[0], node_->shape[1]);
}

template <typename Scalar>
ConstMatrixMap<Scalar> Tensor<Scalar>::as_matrix(Index rows, Index cols) const {
  if (rows * cols != size()) throw ShapeError("cannot view " + to_string(shape()) + " as matrix");
  return ConstMatrixMap<Scalar>(node_->value.data(), rows, cols);
}

template <typename Scalar>
Tensor<Scalar> make_result(std::string_view op, Shape shape, std::vector<Scalar> value,
                           std::vector<Tensor<Scalar>> inputs,
                           typename detail::Node<Scalar>::BackwardFn backward) {
  if (!all_finite<Scalar>(value)) throw NumericError(std::string("non-finite value produced by ") + std::string(op));
  Tensor<Scalar> out(std::move(shape), std::move(value));
  auto& node = *out.node();
  node.op = op;
  const bool track =
      grad_enabled() && std::any_of(inputs.begin(), inputs.end(),
                                    [](const Tensor<Scalar>& t) { return t.defined() && t.requires_grad(); });
  if (track) {
    node.requires_grad = true;
    node.backward = std::move(backward);
    node.inputs.reserve(inputs.size());
    for (auto& t : inputs) node.inputs.push_back(t.node());
  }
  return out;
}

template <typename Scalar>
Tape<Scalar>::Tape(const Tensor<Scalar>& root) : root_(root) {
  std::vector<detail::Node<Scalar>*> stack{root.node().get()};
  std::unordered_set<detail::Node<Scalar>*> visited;
  std::vector<detail::Node<Scalar>*> seen;
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !visited.insert(n).second) continue;
    seen.push_back(n);
    for (auto& in : n->inputs)
      if (in) stack.push_back(in.get());
  }
  std::sort(seen.begin(), seen.end(), [](auto* a, auto* b) { return a->sequence < b->sequence; });
  entries_ = std::move(seen);
}

template <typename Scalar>
std::vector<std::string_view> Tape<Scalar>::op_names() const {
  std::vector<std::string_view> names;
  names.reserve(entries_.size());
  for (auto* n : entries_) names.push_back(n->op);
  return names;
}

template <typename Scalar>
void Tape<Scalar>::run(bool release_intermediate) {
  auto* root = root_.node().get();
  if (root->value.size() != 1) throw ShapeError("backward requires a scalar loss, got " + to_string(root->shape));
  if (!root->requires_grad) return;
  root->grad_buffer()[0] += Scalar(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto* n = *it;
    if (n->is_leaf() || n->grad.empty() || !n->backward) continue;
    n->backward(*n);
    if (release_intermediate) n->grad = std::vector<Scalar>();
  }
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  Tape<Scalar>(loss).run();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template bool all_finite(std::span<const float>);
template bool all_finite(std::span<const double>);
template Tensor<float> make_result(std::string_view, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   detail::Node<float>::BackwardFn);
template Tensor<double> make_result(std::string_view, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    detail::Node<double>::BackwardFn);

}  // namespace hrmedseg

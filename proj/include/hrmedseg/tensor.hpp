#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hrmedseg {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

// Gradient recording is enabled per thread. Disable it for inference and
// for frozen networks so results carry no graph.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

std::uint64_t next_sequence();

template <typename Scalar>
struct Node {
  using BackwardFn = std::function<void(Node&)>;

  std::string_view op = "leaf";
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;
  bool requires_grad = false;
  std::uint64_t sequence = next_sequence();
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  bool is_leaf() const { return inputs.empty(); }

  bool input_needs_grad(std::size_t i) const { return inputs[i] && inputs[i]->requires_grad; }

  // Lazily allocated, zero-initialized gradient buffer.
  std::span<Scalar> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), Scalar(0));
    return grad;
  }

  std::span<Scalar> input_grad(std::size_t i) { return inputs[i]->grad_buffer(); }
  std::span<const Scalar> input_value(std::size_t i) const { return inputs[i]->value; }
};

}  // namespace detail

template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using NodeType = detail::Node<Scalar>;
  using NodePtr = std::shared_ptr<NodeType>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{1}, v); }
  static Tensor from_matrix(const RowMatrix<Scalar>& m);
  static Tensor randn(Shape shape, std::mt19937_64& rng, Scalar stddev = Scalar(1));
  static Tensor uniform(Shape shape, std::mt19937_64& rng, Scalar lo, Scalar hi);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index dim(int axis) const;
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  Index size() const { return static_cast<Index>(node_->value.size()); }

  std::span<const Scalar> data() const { return node_->value; }
  // Only leaves may be written in place; recorded results are immutable.
  std::span<Scalar> mutable_data();
  Scalar item() const;
  Scalar at(std::initializer_list<Index> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Scalar> grad() const { return node_->grad; }
  Tensor grad_tensor() const;
  void zero_grad() { node_->grad.clear(); }

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  std::string_view op() const { return node_->op; }
  const NodePtr& node() const { return node_; }

  ConstMatrixMap<Scalar> matrix() const;
  ConstMatrixMap<Scalar> as_matrix(Index rows, Index cols) const;

 private:
  NodePtr node_;
};

// Builds the recorded result of an operation. The backward rule runs only if
// gradient recording is enabled and some input requires a gradient.
template <typename Scalar>
Tensor<Scalar> make_result(std::string_view op, Shape shape, std::vector<Scalar> value,
                           std::vector<Tensor<Scalar>> inputs,
                           typename detail::Node<Scalar>::BackwardFn backward);

// Topologically ordered record of the operations reachable from a loss,
// replayed in reverse to accumulate gradients.
template <typename Scalar>
class Tape {
 public:
  explicit Tape(const Tensor<Scalar>& root);

  std::size_t size() const { return entries_.size(); }
  std::vector<std::string_view> op_names() const;
  void run(bool release_intermediate = true);

 private:
  Tensor<Scalar> root_;
  std::vector<detail::Node<Scalar>*> entries_;  // increasing creation order
};

template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

template <typename Scalar>
bool all_finite(std::span<const Scalar> values);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace hrmedseg

#pragma once

// Dense row-major float64 tensors with a reverse-mode gradient tape.
//
// A Tensor is an immutable value. When at least one input of an op lives on a
// Tape, the op appends a node to that tape holding the values its backward rule
// needs. Tapes are meant to be per-inference: build one, run the forward pass,
// call backward once (or a few times), then drop it.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gmar {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

std::size_t numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tape;

class Tensor {
 public:
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_->size(); }
  std::span<const double> data() const noexcept { return *data_; }
  std::vector<double> to_vector() const { return *data_; }
  /// Shared handle to the (immutable) value buffer.
  std::shared_ptr<const std::vector<double>> storage() const noexcept { return data_; }

  double operator[](std::size_t flat_index) const { return (*data_)[flat_index]; }
  double at(std::initializer_list<std::size_t> index) const;
  /// Value of a single-element tensor.
  double item() const;

  bool is_taped() const noexcept { return tape_ != nullptr; }
  NodeId node() const noexcept { return node_; }
  const std::shared_ptr<Tape>& tape() const noexcept { return tape_; }

  /// Same values, detached from any tape.
  Tensor detached() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::shared_ptr<Tape> tape_;
  NodeId node_ = kNoNode;
};

/// Gradient of a loss with respect to every node reachable from it.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::vector<double>> per_node, std::vector<Shape> shapes);

  bool has(const Tensor& t) const;
  /// Gradient shaped like `t`. Nodes the loss does not depend on yield zeros.
  Tensor of(const Tensor& t) const;

 private:
  std::vector<std::vector<double>> per_node_;
  std::vector<Shape> shapes_;
};

class Tape : public std::enable_shared_from_this<Tape> {
 public:
  /// Receives dL/d(output) and accumulates (+=) into each parent buffer that is
  /// non-empty. Empty buffers belong to parents that need no gradient.
  using BackwardFn = std::function<void(std::span<const double> grad_out,
                                        std::span<std::vector<double>> parent_grads)>;

  static std::shared_ptr<Tape> create();

  /// Registers `value` as a leaf. Tensors already on this tape are returned as is.
  Tensor watch(const Tensor& value);

  /// Appends an op node. `inputs` are the op's operands in the order the
  /// backward rule expects; untaped inputs are treated as constants.
  static Tensor record(std::string_view op, Tensor value, std::span<const Tensor> inputs,
                       BackwardFn backward);

  /// Reverse sweep seeded with 1.0 at `loss`, which must be a single-element tensor.
  Gradients backward(const Tensor& loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  std::string_view op_name(NodeId id) const { return nodes_.at(id).op; }

 private:
  Tape() = default;

  struct Node {
    std::string op;
    std::vector<NodeId> parents;  // kNoNode for constant operands
    Shape shape;
    BackwardFn backward;
  };

  Tensor attach(Tensor value, Node node);

  std::vector<Node> nodes_;
};

/// Returns the tape shared by the taped inputs, or null when none is taped.
/// Throws ContractError when inputs come from different tapes.
std::shared_ptr<Tape> common_tape(std::span<const Tensor> inputs);

// ---------------------------------------------------------------------------
// Ops. Every op records a tape node when any input is taped.
// Batch dimensions must match exactly; there is no implicit broadcasting.

/// [..., m, k] x [..., k, n] -> [..., m, n]. A rank-2 right operand is shared by
/// every batch entry of the left operand.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
/// Exact-erf GELU.
Tensor gelu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double s);
/// x[..., n] + bias[n], the explicit bias broadcast used by linear layers.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);

Tensor transpose_last2(const Tensor& x);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor reshape(const Tensor& x, Shape shape);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Reductions drop the reduced axis.
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);
/// Sum of all elements as a rank-0 tensor.
Tensor sum(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

// ---------------------------------------------------------------------------

/// Gradient of scalar-valued `f` at `x` through a fresh tape.
Tensor taped_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x);

/// Max relative error between the taped gradient of `f` and central differences
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps). The relative error of one entry
/// uses the denominator max(|a|, |b|, 1e-8). `indices` restricts the check to a
/// subset of flat positions; empty means all.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps,
                  std::span<const std::size_t> indices = {});

double relative_error(double a, double b);

}  // namespace gmar

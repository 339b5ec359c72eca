#include "gmar/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "gmar/error.hpp"

namespace gmar {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void dimension_error(std::string_view op, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << shape_to_string(a) << " and " << shape_to_string(b);
  throw DimensionError(os.str());
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dimension_error(op, a.shape(), b.shape());
}

void require_nonempty_lastdim(std::string_view op, const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0 || x.size() == 0) {
    throw DimensionError(std::string(op) + ": needs a non-empty last dimension, got " +
                         shape_to_string(x.shape()));
  }
}

Tensor record1(std::string_view op, std::vector<double> out, Shape shape, const Tensor& x,
               Tape::BackwardFn fn) {
  const Tensor inputs[] = {x};
  return Tape::record(op, Tensor(std::move(shape), std::move(out)), inputs, std::move(fn));
}

Tensor record2(std::string_view op, std::vector<double> out, Shape shape, const Tensor& a,
               const Tensor& b, Tape::BackwardFn fn) {
  const Tensor inputs[] = {a, b};
  return Tape::record(op, Tensor(std::move(shape), std::move(out)), inputs, std::move(fn));
}

std::shared_ptr<const std::vector<double>> share(const Tensor& t) { return t.storage(); }

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i > 1; --i) strides[i - 2] = strides[i - 1] * shape[i - 1];
  return strides;
}

// out[permuted index] = in[index]; `axes[i]` names the input axis that becomes output axis i.
std::vector<double> permute_values(std::span<const double> in, const Shape& in_shape,
                                   std::span<const std::size_t> axes) {
  const std::size_t rank = in_shape.size();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];
  std::vector<double> out(in.size());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += idx[i] * in_strides[axes[i]];
    out[flat] = in[src];
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

// Splits a shape around `axis` into (outer, axis extent, inner) block sizes.
struct AxisBlocks {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisBlocks axis_blocks(const Shape& shape, std::size_t axis) {
  AxisBlocks b{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) b.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) b.inner *= shape[i];
  return b;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::make_shared<const std::vector<double>>(std::move(data))) {
  if (numel(shape_) != data_->size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape_) + " holds " +
                         std::to_string(numel(shape_)) + " values, got " +
                         std::to_string(data_->size()));
  }
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " for tensor " +
                         shape_to_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range for " + shape_to_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[flat];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_.reset();
  t.node_ = kNoNode;
  return t;
}

// ---------------------------------------------------------------------------
// Gradients

Gradients::Gradients(std::vector<std::vector<double>> per_node, std::vector<Shape> shapes)
    : per_node_(std::move(per_node)), shapes_(std::move(shapes)) {}

bool Gradients::has(const Tensor& t) const {
  return t.is_taped() && t.node() < per_node_.size() && !per_node_[t.node()].empty();
}

Tensor Gradients::of(const Tensor& t) const {
  if (!t.is_taped()) throw ContractError("gradient requested for an untaped tensor");
  if (!has(t)) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), per_node_[t.node()]);
}

// ---------------------------------------------------------------------------
// Tape

std::shared_ptr<Tape> Tape::create() { return std::shared_ptr<Tape>(new Tape()); }

Tensor Tape::attach(Tensor value, Node node) {
  node.shape = value.shape();
  nodes_.push_back(std::move(node));
  value.tape_ = shared_from_this();
  value.node_ = nodes_.size() - 1;
  return value;
}

Tensor Tape::watch(const Tensor& value) {
  if (value.tape_.get() == this) return value;
  return attach(value.detached(), Node{"leaf", {}, {}, nullptr});
}

std::shared_ptr<Tape> common_tape(std::span<const Tensor> inputs) {
  std::shared_ptr<Tape> tape;
  for (const Tensor& t : inputs) {
    if (!t.is_taped()) continue;
    if (tape && tape != t.tape()) throw ContractError("op inputs live on different tapes");
    tape = t.tape();
  }
  return tape;
}

Tensor Tape::record(std::string_view op, Tensor value, std::span<const Tensor> inputs,
                    BackwardFn backward) {
  auto tape = common_tape(inputs);
  if (!tape) return value;
  Node node{std::string(op), {}, {}, std::move(backward)};
  node.parents.reserve(inputs.size());
  for (const Tensor& t : inputs) node.parents.push_back(t.is_taped() ? t.node() : kNoNode);
  return tape->attach(std::move(value), std::move(node));
}

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.tape().get() != this) throw ContractError("loss does not belong to this tape");
  if (loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  std::vector<std::vector<double>> grads(nodes_.size());
  grads[loss.node()] = {1.0};
  for (NodeId id = loss.node() + 1; id-- > 0;) {
    if (grads[id].empty()) continue;
    const Node& node = nodes_[id];
    if (!node.backward) continue;
    std::vector<std::vector<double>> parent_grads(node.parents.size());
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      if (node.parents[i] != kNoNode) parent_grads[i].assign(numel(nodes_[node.parents[i]].shape), 0.0);
    }
    node.backward(grads[id], parent_grads);
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      const NodeId p = node.parents[i];
      if (p == kNoNode) continue;
      if (grads[p].empty()) {
        grads[p] = std::move(parent_grads[i]);
      } else {
        for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += parent_grads[i][j];
      }
    }
  }
  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const Node& n : nodes_) shapes.push_back(n.shape);
  return Gradients(std::move(grads), std::move(shapes));
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) dimension_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t n = b.shape().back();
  if (b.shape()[b.rank() - 2] != k) dimension_error("matmul", a.shape(), b.shape());
  const bool shared_b = b.rank() == 2;
  if (!shared_b && (a.rank() != b.rank() ||
                    !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))) {
    dimension_error("matmul", a.shape(), b.shape());
  }
  const std::size_t batch = a.size() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMap A(a.data().data() + i * m * k, m, k);
    ConstMap B(b.data().data() + (shared_b ? 0 : i * k * n), k, n);
    MutMap(out.data() + i * m * n, m, n).noalias() = A * B;
  }

  auto av = share(a);
  auto bv = share(b);
  return record2("matmul", std::move(out), std::move(out_shape), a, b,
                 [av, bv, batch, m, k, n, shared_b](std::span<const double> g,
                                                    std::span<std::vector<double>> pg) {
                   for (std::size_t i = 0; i < batch; ++i) {
                     ConstMap G(g.data() + i * m * n, m, n);
                     if (!pg[0].empty()) {
                       ConstMap B(bv->data() + (shared_b ? 0 : i * k * n), k, n);
                       MutMap(pg[0].data() + i * m * k, m, k).noalias() += G * B.transpose();
                     }
                     if (!pg[1].empty()) {
                       ConstMap A(av->data() + i * m * k, m, k);
                       MutMap(pg[1].data() + (shared_b ? 0 : i * k * n), k, n).noalias() +=
                           A.transpose() * G;
                     }
                   }
                 });
}

Tensor softmax_lastdim(const Tensor& x) {
  require_nonempty_lastdim("softmax_lastdim", x);
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * cols;
    double* dst = out.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += dst[c] = std::exp(row[c] - mx);
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= total;
  }
  auto y = std::make_shared<const std::vector<double>>(out);
  return record1("softmax", std::move(out), x.shape(), x,
                 [y, rows, cols](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* yr = y->data() + r * cols;
                     const double* gr = g.data() + r * cols;
                     double dot = 0.0;
                     for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                     for (std::size_t c = 0; c < cols; ++c) pg[0][r * cols + c] += yr[c] * (gr[c] - dot);
                   }
                 });
}

Tensor log_softmax_lastdim(const Tensor& x) {
  require_nonempty_lastdim("log_softmax_lastdim", x);
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
  }
  auto y = std::make_shared<const std::vector<double>>(out);
  return record1("log_softmax", std::move(out), x.shape(), x,
                 [y, rows, cols](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t r = 0; r < rows; ++r) {
                     double gsum = 0.0;
                     for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
                     for (std::size_t c = 0; c < cols; ++c) {
                       pg[0][r * cols + c] += g[r * cols + c] - std::exp((*y)[r * cols + c]) * gsum;
                     }
                   }
                 });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (!(eps > 0.0)) throw ParameterError("layernorm: eps must be positive");
  require_nonempty_lastdim("layernorm", x);
  const std::size_t cols = x.shape().back();
  if (gamma.shape() != Shape{cols}) dimension_error("layernorm gamma", x.shape(), gamma.shape());
  if (beta.shape() != Shape{cols}) dimension_error("layernorm beta", x.shape(), beta.shape());
  const std::size_t rows = x.size() / cols;

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  const auto in = x.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (row[c] - mean) * rs;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gm[c] + bt[c];
    }
  }

  auto gv = share(gamma);
  const Tensor inputs[] = {x, gamma, beta};
  return Tape::record(
      "layernorm", Tensor(x.shape(), std::move(out)), inputs,
      [xhat, rstd, gv, rows, cols](std::span<const double> g, std::span<std::vector<double>> pg) {
        std::vector<double> dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * cols;
          const double* hr = xhat->data() + r * cols;
          double mean_d = 0.0;
          double mean_dh = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            dxhat[c] = gr[c] * (*gv)[c];
            mean_d += dxhat[c];
            mean_dh += dxhat[c] * hr[c];
          }
          mean_d /= static_cast<double>(cols);
          mean_dh /= static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            if (!pg[0].empty()) pg[0][r * cols + c] += (*rstd)[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
            if (!pg[1].empty()) pg[1][c] += gr[c] * hr[c];
            if (!pg[2].empty()) pg[2][c] += gr[c];
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] * kInvSqrt2));
  auto xv = share(x);
  return record1("gelu", std::move(out), x.shape(), x,
                 [xv](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double v = (*xv)[i];
                     const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                     const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                     pg[0][i] += g[i] * (cdf + v * pdf);
                   }
                 });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return record2("add", std::move(out), a.shape(), a, b,
                 [](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (auto& p : pg) {
                     if (p.empty()) continue;
                     for (std::size_t i = 0; i < g.size(); ++i) p[i] += g[i];
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record2("sub", std::move(out), a.shape(), a, b,
                 [](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (!pg[0].empty()) pg[0][i] += g[i];
                     if (!pg[1].empty()) pg[1][i] -= g[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto av = share(a);
  auto bv = share(b);
  return record2("mul", std::move(out), a.shape(), a, b,
                 [av, bv](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (!pg[0].empty()) pg[0][i] += g[i] * (*bv)[i];
                     if (!pg[1].empty()) pg[1][i] += g[i] * (*av)[i];
                   }
                 });
}

Tensor mul_scalar(const Tensor& x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return record1("mul_scalar", std::move(out), x.shape(), x,
                 [s](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * s;
                 });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.size()) {
    dimension_error("add_bias", x.shape(), bias.shape());
  }
  const std::size_t cols = bias.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % cols];
  return record2("add_bias", std::move(out), x.shape(), x, bias,
                 [cols](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (!pg[0].empty()) pg[0][i] += g[i];
                     if (!pg[1].empty()) pg[1][i % cols] += g[i];
                   }
                 });
}

Tensor abs(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x[i]);
  auto xv = share(x);
  // Subgradient 0 at exactly 0.
  return record1("abs", std::move(out), x.shape(), x,
                 [xv](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double v = (*xv)[i];
                     pg[0][i] += v > 0.0 ? g[i] : (v < 0.0 ? -g[i] : 0.0);
                   }
                 });
}

Tensor square(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  auto xv = share(x);
  return record1("square", std::move(out), x.shape(), x,
                 [xv](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += 2.0 * (*xv)[i] * g[i];
                 });
}

Tensor sqrt(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (x[i] < 0.0) throw ParameterError("sqrt of a negative value");
    out[i] = std::sqrt(x[i]);
  }
  auto y = std::make_shared<const std::vector<double>>(out);
  // The derivative is unbounded at 0; report 0 there so gradients stay finite.
  return record1("sqrt", std::move(out), x.shape(), x,
                 [y](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if ((*y)[i] > 0.0) pg[0][i] += 0.5 * g[i] / (*y)[i];
                   }
                 });
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const std::size_t rank = x.rank();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) throw DimensionError("permute: axis count does not match rank");
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: axes are not a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  std::vector<std::size_t> inverse(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[axes[i]];
    inverse[axes[i]] = i;
  }
  auto out = permute_values(x.data(), x.shape(), axes);
  return record1("permute", std::move(out), out_shape, x,
                 [inverse, out_shape](std::span<const double> g, std::span<std::vector<double>> pg) {
                   const auto back = permute_values(g, out_shape, inverse);
                   for (std::size_t i = 0; i < back.size(); ++i) pg[0][i] += back[i];
                 });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2 needs rank >= 2, got " + shape_to_string(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) dimension_error("reshape", x.shape(), shape);
  return record1("reshape", x.to_vector(), std::move(shape), x,
                 [](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                 });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.shape()[axis]) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + shape_to_string(x.shape()));
  }
  const AxisBlocks b = axis_blocks(x.shape(), axis);
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> out(b.outer * len * b.inner);
  const auto in = x.data();
  for (std::size_t o = 0; o < b.outer; ++o) {
    std::copy_n(in.data() + (o * b.extent + begin) * b.inner, len * b.inner, out.data() + o * len * b.inner);
  }
  return record1("slice", std::move(out), std::move(out_shape), x,
                 [b, begin, len](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t o = 0; o < b.outer; ++o) {
                     for (std::size_t j = 0; j < len * b.inner; ++j) {
                       pg[0][(o * b.extent + begin) * b.inner + j] += g[o * len * b.inner + j];
                     }
                   }
                 });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) dimension_error("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) dimension_error("concat", first, s);
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisBlocks ob = axis_blocks(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto in = parts[pi].data();
    const std::size_t chunk = extents[pi] * ob.inner;
    for (std::size_t o = 0; o < ob.outer; ++o) {
      std::copy_n(in.data() + o * chunk, chunk, out.data() + (o * ob.extent + offset) * ob.inner);
    }
    offset += extents[pi];
  }
  return Tape::record("concat", Tensor(out_shape, std::move(out)), parts,
                      [ob, extents](std::span<const double> g, std::span<std::vector<double>> pg) {
                        std::size_t off = 0;
                        for (std::size_t pi = 0; pi < pg.size(); ++pi) {
                          const std::size_t chunk = extents[pi] * ob.inner;
                          if (!pg[pi].empty()) {
                            for (std::size_t o = 0; o < ob.outer; ++o) {
                              for (std::size_t j = 0; j < chunk; ++j) {
                                pg[pi][o * chunk + j] += g[(o * ob.extent + off) * ob.inner + j];
                              }
                            }
                          }
                          off += extents[pi];
                        }
                      });
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("sum_axis: axis out of range for " + shape_to_string(x.shape()));
  const AxisBlocks b = axis_blocks(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(b.outer * b.inner, 0.0);
  const auto in = x.data();
  for (std::size_t o = 0; o < b.outer; ++o)
    for (std::size_t a = 0; a < b.extent; ++a)
      for (std::size_t i = 0; i < b.inner; ++i) out[o * b.inner + i] += in[(o * b.extent + a) * b.inner + i];
  return record1("sum_axis", std::move(out), std::move(out_shape), x,
                 [b](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (std::size_t o = 0; o < b.outer; ++o)
                     for (std::size_t a = 0; a < b.extent; ++a)
                       for (std::size_t i = 0; i < b.inner; ++i)
                         pg[0][(o * b.extent + a) * b.inner + i] += g[o * b.inner + i];
                 });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("mean_axis: axis out of range for " + shape_to_string(x.shape()));
  return mul_scalar(sum_axis(x, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return record1("sum", {total}, Shape{}, x,
                 [](std::span<const double> g, std::span<std::vector<double>> pg) {
                   for (double& v : pg[0]) v += g[0];
                 });
}

// ---------------------------------------------------------------------------
// Gradient checking

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

Tensor taped_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  auto tape = Tape::create();
  const Tensor xw = tape->watch(x);
  const Tensor loss = f(xw);
  if (!loss.is_taped()) return Tensor::zeros(x.shape());
  return tape->backward(loss).of(xw);
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps,
                  std::span<const std::size_t> indices) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ParameterError("grad_check: eps must lie in (0, 1e-2]");
  const Tensor analytic = taped_gradient(f, x);
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    indices = all;
  }
  double worst = 0.0;
  std::vector<double> probe = x.to_vector();
  for (std::size_t i : indices) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig - eps;
    const double down = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

}  // namespace gmar

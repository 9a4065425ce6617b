#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "relmask/tensor.hpp"

namespace relmask {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index dim(int axis) const { return value().dim(axis); }
  int rank() const { return value().rank(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Linear record of forward ops. backward() walks it once in reverse.
///
/// Nodes are appended in execution order, so ids are already a topological
/// order. Ops whose inputs carry no gradient are recorded without a backward
/// closure.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  struct Node {
    std::string op;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    std::vector<int> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value);
  Var<Scalar> variable(Tensor<Scalar> value);

  /// Append an op result. Throws NumericalError on a non-finite value.
  Var<Scalar> record(std::string op, Tensor<Scalar> value,
                     std::initializer_list<Var<Scalar>> inputs, BackwardFn fn);
  Var<Scalar> record(std::string op, Tensor<Scalar> value,
                     const std::vector<Var<Scalar>>& inputs, BackwardFn fn);

  const Tensor<Scalar>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const Node& node(int id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, zero-allocated on first touch.
  Tensor<Scalar>& grad_buffer(int id);
  /// Upstream gradient during backward; valid inside a BackwardFn.
  const Tensor<Scalar>& upstream(int id) const { return nodes_[id].grad; }

  /// Gradient of the last backward() w.r.t. v (zeros when v was unused).
  Tensor<Scalar> grad(const Var<Scalar>& v) const;

  void backward(const Var<Scalar>& loss);
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

// Elementwise (numpy-style broadcasting for the binary ops).
template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> relu(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> abs(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& x, Scalar factor);
template <typename Scalar> Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar c);

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }

/// [..., n, k] x [k, m] or batched [..., n, k] x [..., k, m].
template <typename Scalar> Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);
/// x [..., in] * w [in, out] + bias [out].
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& bias);

/// NCHW input, OIHW weight, optional bias [O] (pass an invalid Var to omit).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& bias,
                   int stride, int pad);
/// Nearest-neighbour 2x spatial upsampling of an NCHW tensor.
template <typename Scalar> Var<Scalar> upsample2x(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis);
template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& x, int axis, Index start, Index length);
/// One extent may be -1 and is inferred.
template <typename Scalar> Var<Scalar> reshape(const Var<Scalar>& x, Shape shape);
template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& x, const std::vector<int>& perm);

/// Normalizes over the last axis, then applies gamma/beta of that extent.
template <typename Scalar>
Var<Scalar> layernorm(const Var<Scalar>& x, const Var<Scalar>& gamma,
                      const Var<Scalar>& beta, Scalar eps = Scalar(1e-5));
template <typename Scalar> Var<Scalar> softmax(const Var<Scalar>& x, int axis = -1);
template <typename Scalar> Var<Scalar> log_softmax(const Var<Scalar>& x, int axis = -1);

/// Rows of table [V, D] picked by ids; result shape = prefix ++ [D].
template <typename Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, std::span<const Index> ids, Shape prefix);
/// out[i] = x[i, indices[i]] for x [B, N].
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, std::span<const Index> indices);

template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> mean(const Var<Scalar>& x);
/// Mean over the listed axes; those axes are removed from the result.
template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x, const std::vector<int>& axes);
/// Max over one axis (removed); gradient flows to the first maximal entry.
template <typename Scalar> Var<Scalar> max(const Var<Scalar>& x, int axis);

/// softmax(q k^T / sqrt(d)) v over the last two axes of [..., T, d] operands.
template <typename Scalar>
Var<Scalar> scaled_dot_attention(const Var<Scalar>& q, const Var<Scalar>& k,
                                 const Var<Scalar>& v);

}  // namespace relmask

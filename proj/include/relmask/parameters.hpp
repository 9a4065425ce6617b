#pragma once

#include <string>
#include <vector>

#include "relmask/autodiff.hpp"

namespace relmask {

/// Ordered, named collection of learnable tensors owned by a model.
template <typename Scalar>
class ParameterSet {
 public:
  /// Registers a tensor and returns its slot.
  int add(std::string name, Tensor<Scalar> init) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return static_cast<int>(values_.size()) - 1;
  }

  std::size_t size() const { return values_.size(); }
  Tensor<Scalar>& operator[](int slot) { return values_[slot]; }
  const Tensor<Scalar>& operator[](int slot) const { return values_[slot]; }
  const std::string& name(int slot) const { return names_[slot]; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor<Scalar>>& tensors() { return values_; }
  const std::vector<Tensor<Scalar>>& tensors() const { return values_; }

  Index count() const {
    Index n = 0;
    for (const auto& t : values_) n += t.size();
    return n;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (std::size_t i = 0; i < values_.size(); ++i)
      out.add(names_[i], values_[i].template cast<Other>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<Scalar>> values_;
};

/// Lazily places parameters on a tape; slots not touched by the forward pass
/// report zero gradients.
template <typename Scalar>
class ParameterBinding {
 public:
  ParameterBinding(Tape<Scalar>& tape, const ParameterSet<Scalar>& params, bool trainable = true)
      : tape_(tape), params_(params), trainable_(trainable), vars_(params.size()) {}

  Var<Scalar> operator[](int slot) {
    Var<Scalar>& v = vars_[slot];
    if (!v.valid())
      v = trainable_ ? tape_.variable(params_[slot]) : tape_.constant(params_[slot]);
    return v;
  }

  /// Uses an existing tape value for a slot (finite-difference checks).
  void bind(int slot, Var<Scalar> v) { vars_[slot] = v; }

  Tape<Scalar>& tape() { return tape_; }

  std::vector<Tensor<Scalar>> gradients() const {
    std::vector<Tensor<Scalar>> out;
    out.reserve(vars_.size());
    for (std::size_t i = 0; i < vars_.size(); ++i)
      out.push_back(vars_[i].valid() ? tape_.grad(vars_[i]) : Tensor<Scalar>(params_[i].shape()));
    return out;
  }

 private:
  Tape<Scalar>& tape_;
  const ParameterSet<Scalar>& params_;
  bool trainable_;
  std::vector<Var<Scalar>> vars_;
};

}  // namespace relmask

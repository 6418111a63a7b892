// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "affnet/common.hpp"

namespace affnet {

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// Dense row-major n-d array with an optional gradient buffer.
///
/// A Tensor is a cheap value-semantic handle to shared storage: copies
/// alias the same data, `clone()` deep-copies. Ops treat the values of
/// their inputs as immutable once recorded on a Tape; gradients are the
/// only buffers mutated afterwards.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape. Extents must be positive.
  explicit Tensor(std::vector<int> shape)
      : Tensor(std::move(shape), std::vector<T>{}, /*check=*/false) {
    s_->v.assign(static_cast<std::size_t>(shape_numel(s_->shape)), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> values)
      : Tensor(std::move(shape), std::move(values), /*check=*/true) {}

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    for (T& x : t.s_->v) x = value;
    return t;
  }

  /// I.i.d. uniform values in [lo, hi), drawn from `rng` in row-major order.
  static Tensor uniform(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (T& x : t.s_->v) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return static_cast<bool>(s_); }

  const std::vector<int>& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(s_->v.size()); }

  T* data() { return s_->v.data(); }
  const T* data() const { return s_->v.data(); }
  AlignedVec<T>& values() { return s_->v; }
  const AlignedVec<T>& values() const { return s_->v; }

  /// Plain-vector copy, mostly for test comparisons.
  std::vector<T> to_vector() const { return std::vector<T>(s_->v.begin(), s_->v.end()); }

  /// Row-major element access for tests and small-scale code.
  T at(std::initializer_list<int> idx) const {
    std::int64_t flat = 0;
    auto it = idx.begin();
    for (std::size_t d = 0; d < s_->shape.size(); ++d, ++it) {
      flat = flat * s_->shape[d] + *it;
    }
    return s_->v[static_cast<std::size_t>(flat)];
  }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    s_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !s_->g.empty(); }
  T* grad() { return s_->g.data(); }
  const T* grad() const { return s_->g.data(); }
  const AlignedVec<T>& grad_values() const {
    if (s_->g.empty()) throw ContractViolation("tensor has no gradient buffer");
    return s_->g;
  }

  /// Allocates (if needed) and zero-fills the gradient buffer.
  void ensure_zero_grad() { s_->g.assign(s_->v.size(), T(0)); }
  void drop_grad() {
    s_->g.clear();
    s_->g.shrink_to_fit();
  }

  /// Deep copy of the values; gradient state is not copied.
  Tensor clone() const {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = s_->shape;
    t.s_->v = s_->v;
    t.s_->requires_grad = s_->requires_grad;
    return t;
  }

  bool same_storage(const Tensor& o) const { return s_ == o.s_; }
  const void* storage_id() const { return s_.get(); }

 private:
  struct Storage {
    std::vector<int> shape;
    AlignedVec<T> v;
    AlignedVec<T> g;  // empty or same length as v
    bool requires_grad = false;
  };

  Tensor(std::vector<int> shape, std::vector<T> values, bool check) : s_(std::make_shared<Storage>()) {
    for (int e : shape) {
      if (e <= 0) throw ContractViolation("tensor extents must be positive, got " + shape_str(shape));
    }
    s_->shape = std::move(shape);
    if (check && static_cast<std::int64_t>(values.size()) != shape_numel(s_->shape)) {
      throw ContractViolation("value count " + std::to_string(values.size()) + " does not match shape " +
                              shape_str(s_->shape));
    }
    s_->v.assign(values.begin(), values.end());
  }

  std::shared_ptr<Storage> s_;
};

/// Record of executed primitives, in execution (= topological) order.
///
/// Ops append themselves during the forward pass; `backward` replays the
/// record once in reverse, accumulating gradients. A Tape and the tensors
/// recorded on it belong to one logical thread.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::string name, std::vector<Tensor<T>> inputs, Tensor<T> output, BackwardFn fn) {
    produced_.insert(output.storage_id());
    nodes_.push_back(Node{std::move(name), std::move(inputs), std::move(output), std::move(fn)});
  }

  /// True if `t` was produced by an op on this tape.
  bool tracks(const Tensor<T>& t) const { return produced_.count(t.storage_id()) > 0; }

  /// True if gradients must flow into `t`: it asked for them, or it is an
  /// interior result that carries them further back.
  bool wants_grad(const Tensor<T>& t) const { return t.requires_grad() || tracks(t); }

  /// Populates gradients of everything reachable from `scalar_output`.
  /// Leaves with requires_grad that were touched by the tape but do not
  /// influence the output end up with zero grad.
  void backward(const Tensor<T>& scalar_output) {
    if (scalar_output.numel() != 1) {
      throw ContractViolation("backward requires a scalar output, got shape " + shape_str(scalar_output.shape()));
    }
    if (!tracks(scalar_output)) {
      throw ContractViolation("backward output was not produced on this tape");
    }
    for (Node& n : nodes_) {
      n.output.ensure_zero_grad();
      for (Tensor<T>& in : n.inputs) {
        if (wants_grad(in)) in.ensure_zero_grad();
      }
    }
    const_cast<Tensor<T>&>(scalar_output).grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->fn) it->fn();
    }
  }

  /// Scans every recorded output for NaN/Inf; throws NumericError naming
  /// the first offending op.
  void check_finite() const;

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t i) const { return nodes_[i].name; }

  void clear() {
    nodes_.clear();
    produced_.clear();
  }

 private:
  struct Node {
    std::string name;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn fn;
  };

  std::vector<Node> nodes_;
  std::unordered_set<const void*> produced_;
};

}  // namespace affnet

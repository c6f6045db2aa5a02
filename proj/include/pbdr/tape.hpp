#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape owns every value produced during a forward pass. Each recorded node
// keeps its value, a lazily allocated gradient, and a backward rule that
// scatters the node's gradient into its inputs. Nodes are appended in
// evaluation order, so walking them in reverse is a valid topological order.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pbdr {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised on contract violations by callers (bad shapes, invalid counts).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw UsageError(message);
}

/// A named trainable matrix owned by a model component.
template <class S>
struct Parameter {
  std::string name;
  Matrix<S> value;
};

template <class S>
class Tape;

/// Lightweight handle to a node on a Tape.
template <class S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<S>& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape<S>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<S>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A value that never receives a gradient.
  Var<S> constant(Matrix<S> value) { return push(std::move(value), false, {}); }

  /// A value whose gradient is retained after backward().
  Var<S> leaf(Matrix<S> value) { return push(std::move(value), true, {}); }

  /// Binds a model parameter. Untrainable bindings become constants.
  Var<S> parameter(Parameter<S>& p, bool trainable = true) {
    Var<S> v = push(p.value, trainable, {});
    if (trainable) bindings_.emplace_back(&p, v.id());
    return v;
  }

  /// Records an op output. The backward rule is kept only when some input
  /// requires a gradient.
  Var<S> record(Matrix<S> value, std::initializer_list<Var<S>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      require(in.valid() && &in.tape() == this, "op input belongs to a different tape");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  Var<S> record(Matrix<S> value, const std::vector<Var<S>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      require(in.valid() && &in.tape() == this, "op input belongs to a different tape");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Matrix<S>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var<S>& v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient flowing into node `id` during backward. Empty if none arrived.
  const Matrix<S>& grad_ref(std::size_t id) const { return nodes_[id].grad; }

  template <class Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void backward(const Var<S>& loss) {
    require(loss.valid() && &loss.tape() == this, "loss belongs to a different tape");
    require(loss.rows() == 1 && loss.cols() == 1, "backward requires a scalar loss");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Matrix<S>::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Gradient of a node after backward(); zeros if it was unreachable.
  Matrix<S> grad(const Var<S>& v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) return Matrix<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Gradients for the listed parameters, in order. Parameters bound more
  /// than once have their contributions summed; unbound ones get zeros.
  std::vector<Matrix<S>> parameter_grads(const std::vector<Parameter<S>*>& params) const {
    std::vector<Matrix<S>> out;
    out.reserve(params.size());
    for (Parameter<S>* p : params) {
      Matrix<S> g = Matrix<S>::Zero(p->value.rows(), p->value.cols());
      for (const auto& [bound, id] : bindings_) {
        if (bound == p && nodes_[id].grad.size() != 0) g += nodes_[id].grad;
      }
      out.push_back(std::move(g));
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Gradient-checking hook. While attached, every detach() appends its value
  /// to `store`, or, with `replay`, returns the stored values in order instead
  /// of its input. This holds detached quantities fixed under perturbation.
  void attach_detach_log(std::vector<Matrix<S>>* store, bool replay) {
    detach_log_ = store;
    detach_replay_ = replay;
    detach_next_ = 0;
  }

  /// A constant copy of `v` (see attach_detach_log).
  Var<S> detach(const Matrix<S>& v) {
    if (detach_log_ == nullptr) return constant(v);
    if (!detach_replay_) {
      detach_log_->push_back(v);
      return constant(v);
    }
    require(detach_next_ < detach_log_->size(), "detach replay ran past the recorded values");
    return constant((*detach_log_)[detach_next_++]);
  }

  /// Drops every node recorded after `mark`. Handles past the mark dangle.
  void rewind(std::size_t mark) {
    require(mark <= nodes_.size(), "rewind past end of tape");
    nodes_.resize(mark);
    while (!bindings_.empty() && bindings_.back().second >= mark) bindings_.pop_back();
  }

 private:
  struct Node {
    Matrix<S> value;
    Matrix<S> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<S> push(Matrix<S> value, bool requires_grad, BackwardFn fn) {
#ifndef NDEBUG
    if (!value.allFinite()) throw std::domain_error("non-finite value produced on tape");
#endif
    nodes_.push_back(Node{std::move(value), Matrix<S>{}, requires_grad, std::move(fn)});
    return Var<S>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<Parameter<S>*, std::size_t>> bindings_;
  std::vector<Matrix<S>>* detach_log_ = nullptr;
  bool detach_replay_ = false;
  std::size_t detach_next_ = 0;
};

}  // namespace pbdr

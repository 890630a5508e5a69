#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tan/diffcore/array.hpp"
#include "tan/errors.hpp"

namespace tanflow {

/// A named trainable tensor together with its gradient buffer.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Array value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() { grad = Array(value.shape()); }

  std::string name;
  Array value;
  Array grad;
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of primitive evaluations. Nodes are appended in
/// evaluation order, so inputs always precede their consumers and a reverse
/// sweep visits each node once. A tape built with `record = false` keeps
/// values only, for inference and inversion.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : recording_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Array value) {
    nodes_.push_back(Node{std::move(value), {}, false, false, {}});
    return Var(this, nodes_.size() - 1);
  }

  /// Leaf for a trainable parameter. Repeated calls with the same parameter
  /// return the same node so that gradients from every use accumulate.
  Var param(const Parameter& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
    nodes_.push_back(Node{p.value, {}, false, recording_, {}});
    param_ids_.emplace(&p, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
  }

  /// Appends the result of a primitive. `backward` is kept only when some
  /// input needs a gradient.
  Var record(Array value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& v : inputs) {
      check_owner(v);
      needs = needs || nodes_[v.id()].requires_grad;
    }
    needs = needs && recording_;
    nodes_.push_back(Node{std::move(value), {}, false, needs, needs ? std::move(backward) : Backward{}});
    return Var(this, nodes_.size() - 1);
  }

  Var record(Array value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Array& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first access.
  Array& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = Array(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return nodes_.at(id).has_grad; }

  /// Reverse sweep from a scalar root. Every listed parameter's gradient is
  /// overwritten: parameters that did not participate receive zeros. A tape
  /// supports a single backward call.
  void backward(Var root, std::span<Parameter* const> params) {
    check_owner(root);
    if (!recording_) throw ContractViolation("backward on a non-recording tape");
    if (swept_) throw ContractViolation("tape already consumed by a backward sweep");
    const Array& rv = nodes_[root.id()].value;
    if (rv.size() != 1 || rv.rank() > 1) {
      throw ContractViolation("backward root must be scalar, got shape " + shape_string(rv.shape()));
    }
    swept_ = true;
    grad(root.id())[0] = 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.has_grad && n.backward) n.backward(*this, id);
    }
    for (Parameter* p : params) {
      p->zero_grad();
      if (auto it = param_ids_.find(p); it != param_ids_.end() && nodes_[it->second].has_grad) {
        p->grad = nodes_[it->second].grad;
      }
    }
  }

 private:
  struct Node {
    Array value;
    Array grad;
    bool has_grad;
    bool requires_grad;
    Backward backward;
  };

  void check_owner(const Var& v) const {
    if (v.tape_ != this) throw ContractViolation("variable belongs to a different tape");
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
  bool recording_;
  bool swept_ = false;
};

inline const Array& Var::value() const { return tape_->value(id_); }

/// Convenience: reverse sweep filling `params[i]->grad`.
inline void backward(Tape& tape, Var root, std::span<Parameter* const> params) {
  tape.backward(root, params);
}

}  // namespace tanflow

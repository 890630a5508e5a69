#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tan/transforms/transform.hpp"

namespace tanflow {

/// Result of a chain pass: final z, total log|det| and each stage's term.
struct ChainOutput {
  Var z;
  Var logdet;
  std::vector<Var> stage_logdets;
};

/// Composition q = q^(T) o ... o q^(1) applied data -> latent. The total
/// log-determinant is the sum of the stage terms.
class TransformChain {
 public:
  explicit TransformChain(std::size_t dim) : dim_(dim) {}

  TransformChain(TransformChain&&) noexcept = default;
  TransformChain& operator=(TransformChain&&) noexcept = default;

  void append(std::unique_ptr<Transform> stage) {
    if (stage->dim() != dim_) {
      throw ContractViolation("chain of dimension " + std::to_string(dim_) + " cannot take stage " +
                              stage->name() + " of dimension " + std::to_string(stage->dim()));
    }
    stages_.push_back(std::move(stage));
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return stages_.size(); }
  bool empty() const { return stages_.empty(); }
  const Transform& stage(std::size_t k) const { return *stages_.at(k); }
  Transform& stage(std::size_t k) { return *stages_.at(k); }

  ChainOutput forward(Tape& tape, Var x) const {
    if (x.value().rank() != 2 || x.value().cols() != dim_) {
      throw ContractViolation("chain: expected [batch, " + std::to_string(dim_) + "] input, got " +
                              shape_string(x.shape()));
    }
    ChainOutput out{x, tape.constant(Array(Shape{x.value().rows()})), {}};
    for (std::size_t k = 0; k < stages_.size(); ++k) {
      FlowOutput step = stages_[k]->forward(tape, out.z);
      out.z = step.z;
      out.logdet = k == 0 ? step.logdet : out.logdet + step.logdet;
      out.stage_logdets.push_back(step.logdet);
    }
    return out;
  }

  /// Applies the stage inverses in reverse order. Singular stages are
  /// reported with their position in the chain.
  Array inverse(const Array& z) const {
    Array x = z;
    for (std::size_t k = stages_.size(); k-- > 0;) {
      try {
        x = stages_[k]->inverse(x);
      } catch (const SingularityError& e) {
        throw SingularityError("inverting stage " + std::to_string(k) + " (" +
                               std::string(stages_[k]->kind()) + "): " + e.what());
      }
    }
    return x;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& s : stages_) {
      auto p = s->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

 private:
  std::size_t dim_;
  std::vector<std::unique_ptr<Transform>> stages_;
};

inline std::pair<Array, Array> apply(const TransformChain& chain, const Array& x) {
  Tape tape(false);
  ChainOutput out = chain.forward(tape, tape.constant(x));
  return {out.z.value(), out.logdet.value()};
}

}  // namespace tanflow

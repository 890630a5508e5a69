#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "tan/conditionals/models.hpp"
#include "tan/transforms/preset.hpp"

namespace tanflow {

/// Everything needed to rebuild a model's architecture and initialization.
struct ModelConfig {
  std::string preset = "None";
  std::string conditional = "SingleInd";
  std::size_t dim = 1;
  std::uint64_t seed = 0;
  TransformOptions transform{};
  ConditionalOptions cond{};
};

/// A transformation chain followed by an autoregressive conditional:
///   log p(x) = log p_cond(q(x)) + log|det dq/dx|.
class TanModel {
 public:
  explicit TanModel(ModelConfig config)
      : config_(std::move(config)),
        chain_(build_chain(config_.preset, config_.dim, config_.transform, RandomStream(config_.seed).split("chain"))),
        conditional_(make_conditional(config_.conditional, config_.dim, config_.cond,
                                      RandomStream(config_.seed).split("conditional"))) {
    config_.conditional = canonical_conditional(config_.conditional);
    std::set<std::string> seen;
    for (Parameter* p : parameters()) {
      if (!seen.insert(p->name).second) throw ContractViolation("duplicate parameter name " + p->name);
    }
  }

  TanModel(TanModel&&) noexcept = default;
  TanModel& operator=(TanModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }
  const TransformChain& chain() const { return chain_; }
  TransformChain& chain() { return chain_; }
  const Conditional& conditional() const { return *conditional_; }
  Conditional& conditional() { return *conditional_; }

  /// Per-instance log density, [m].
  Var log_prob(Tape& tape, Var x) const {
    ChainOutput out = chain_.forward(tape, x);
    Var lp = conditional_->log_prob(tape, out.z);
    return chain_.empty() ? lp : lp + out.logdet;
  }

  /// Batched evaluation without gradients. Rows are processed in chunks,
  /// optionally on several threads. For a fixed chunk size the result is
  /// bit-identical for any worker count; other chunk sizes agree to rounding.
  Array log_prob(const Array& x, std::size_t workers = 1, std::size_t chunk = 4096) const {
    check_input(x);
    const std::size_t m = x.rows();
    Array out(Shape{m});
    const std::size_t chunks = (m + chunk - 1) / chunk;
    auto run = [&](std::size_t c) {
      const std::size_t begin = c * chunk, end = std::min(m, begin + chunk);
      Tape tape(false);
      const Array lp = log_prob(tape, tape.constant(x.slice_rows(begin, end))).value();
      std::copy(lp.data().begin(), lp.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin));
    };
    workers = std::max<std::size_t>(1, std::min(workers, chunks));
    if (workers == 1) {
      for (std::size_t c = 0; c < chunks; ++c) run(c);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t c = w; c < chunks; c += workers) run(c);
        });
    }
    return out;
  }

  /// Mean negative log-likelihood of a batch (scalar).
  Var nll_loss(Tape& tape, Var x) const {
    if (x.value().rank() != 2 || x.value().rows() == 0) throw ContractViolation("nll_loss needs a nonempty batch");
    return neg(mean(log_prob(tape, x)));
  }

  /// Draws z from the conditional, then inverts the chain.
  Array sample(std::size_t n, std::uint64_t seed) const {
    const Array z = conditional_->sample(n, RandomStream(seed).split("sample"));
    if (n == 0) return z;
    return chain_.inverse(z);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = chain_.parameters();
    std::vector<Parameter*> c = conditional_->parameters();
    out.insert(out.end(), c.begin(), c.end());
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (Parameter* p : parameters()) n += p->value.size();
    return n;
  }

  std::vector<Array> snapshot() {
    std::vector<Array> out;
    for (Parameter* p : parameters()) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Array>& values) {
    std::vector<Parameter*> ps = parameters();
    if (values.size() != ps.size()) throw ContractViolation("restore: parameter count mismatch");
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (values[k].shape() != ps[k]->value.shape())
        throw ContractViolation("restore: shape mismatch for " + ps[k]->name);
    }
    for (std::size_t k = 0; k < ps.size(); ++k) ps[k]->value = values[k];
  }

 private:
  void check_input(const Array& x) const {
    if (x.rank() != 2 || x.cols() != config_.dim) {
      throw ContractViolation("model expects [n, " + std::to_string(config_.dim) + "] data, got " +
                              shape_string(x.shape()));
    }
  }

  ModelConfig config_;
  TransformChain chain_;
  std::unique_ptr<Conditional> conditional_;
};

}  // namespace tanflow

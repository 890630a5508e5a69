#pragma once

#include <string>
#include <vector>

#include "tan/diffcore/rng.hpp"
#include "tan/nn.hpp"
#include "tan/transforms/transform.hpp"

namespace tanflow {

/// Additive coupling: the first ceil(d/2) coordinates pass through and the
/// rest are shifted by a network of the first block. log|det| = 0.
class AdditiveCoupling final : public Transform {
 public:
  AdditiveCoupling(std::string name, std::size_t dim, std::size_t hidden, double net_leak,
                   RandomStream rng, double output_gain = 0.01)
      : Transform(name, checked_dim(name, dim)),
        split_((dim + 1) / 2),
        net_(name + ".net", {split_, hidden, hidden, dim - split_}, rng, net_leak, output_gain) {}

  std::string_view kind() const override { return "AdditiveCoupling"; }

  FlowOutput forward(Tape& tape, Var x) const override {
    check_input(x.value());
    const std::size_t m = x.value().rows();
    Var head = slice_cols(x, 0, split_);
    Var tail = slice_cols(x, split_, dim());
    Var z = concat_cols({head, tail + net_.forward(tape, head)});
    return {z, detail::zero_logdet(tape, m)};
  }

  Array inverse(const Array& z) const override {
    check_input(z);
    Tape tape(false);
    Var zv = tape.constant(z);
    Var head = slice_cols(zv, 0, split_);
    Var tail = slice_cols(zv, split_, dim());
    return concat_cols({head, tail - net_.forward(tape, head)}).value();
  }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> out;
    net_.collect(out);
    return out;
  }

  std::size_t split() const { return split_; }
  nn::Mlp& net() { return net_; }

 private:
  static std::size_t checked_dim(const std::string& name, std::size_t dim) {
    if (dim < 2) throw ContractViolation(name + ": additive coupling needs d >= 2");
    return dim;
  }

  std::size_t split_;
  nn::Mlp net_;
};

}  // namespace tanflow

#pragma once

// Small network building blocks shared by transformations and conditionals.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tan/diffcore/ops.hpp"
#include "tan/diffcore/rng.hpp"
#include "tan/diffcore/tape.hpp"

namespace tanflow::nn {

inline Array random_normal(Shape shape, RandomStream& rng, double stddev) {
  Array a(std::move(shape));
  for (double& v : a.data()) v = stddev * rng.normal();
  return a;
}

/// Affine layer y = x W + b with W: [in, out].
class Dense {
 public:
  Dense(const std::string& name, std::size_t in, std::size_t out, RandomStream rng, double gain = 1.0)
      : weight_(name + ".weight",
                random_normal(Shape{in, out}, rng, gain / std::sqrt(static_cast<double>(in ? in : 1)))),
        bias_(name + ".bias", Array(Shape{out})) {}

  Var forward(Tape& tape, Var x) const {
    return affine(x, tape.param(weight_), tape.param(bias_));
  }

  std::size_t in() const { return weight_.value.dim(0); }
  std::size_t out() const { return weight_.value.dim(1); }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter weight_;
  Parameter bias_;
};

/// Fully connected network with leaky-rectifier hidden units and a linear
/// output layer. `widths` lists input, hidden..., output sizes.
class Mlp {
 public:
  Mlp(const std::string& name, const std::vector<std::size_t>& widths, RandomStream rng, double leak,
      double output_gain = 1.0)
      : leak_(leak) {
    if (widths.size() < 2) throw ContractViolation("Mlp needs at least input and output widths");
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
      const bool last = k + 2 == widths.size();
      layers_.emplace_back(name + ".l" + std::to_string(k), widths[k], widths[k + 1], rng.split(k),
                           last ? output_gain : 1.0);
    }
  }

  Var forward(Tape& tape, Var x) const {
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      x = layers_[k].forward(tape, x);
      if (k + 1 < layers_.size()) x = leaky_relu(x, leak_);
    }
    return x;
  }

  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }

  void collect(std::vector<Parameter*>& out) {
    for (Dense& l : layers_) l.collect(out);
  }

 private:
  std::vector<Dense> layers_;
  double leak_;
};

/// Gated recurrent cell:
///   r  = sigmoid(x W_r + s U_r + b_r)
///   u  = sigmoid(x W_u + s U_u + b_u)
///   c  = tanh(x W_c + (r * s) U_c + b_c)
///   s' = u * s + (1 - u) * c
/// Input weights are stored side by side as [W_r | W_u | W_c] ([in, 3H]),
/// state weights as [U_r | U_u] ([H, 2H]) plus U_c ([H, H]), and the bias
/// as [b_r | b_u | b_c].
class GruCell {
 public:
  GruCell(const std::string& name, std::size_t in, std::size_t units, RandomStream rng)
      : units_(units),
        input_weight_(name + ".input_weight",
                      random_normal(Shape{in, 3 * units}, rng, 1.0 / std::sqrt(static_cast<double>(in)))),
        gate_weight_(name + ".gate_weight", random_normal(Shape{units, 2 * units}, rng,
                                                          1.0 / std::sqrt(static_cast<double>(units)))),
        candidate_weight_(name + ".candidate_weight",
                          random_normal(Shape{units, units}, rng, 1.0 / std::sqrt(static_cast<double>(units)))),
        bias_(name + ".bias", Array(Shape{3 * units})) {}

  /// x: [m, in], state: [m, H] -> [m, H].
  Var forward(Tape& tape, Var x, Var state) const {
    const std::size_t m = x.value().rows();
    const std::size_t h = units_;
    Var xin = matmul(x, tape.param(input_weight_)) + broadcast_rows(tape.param(bias_), m);
    Var sg = matmul(state, tape.param(gate_weight_));
    Var reset = sigmoid(slice_cols(xin, 0, h) + slice_cols(sg, 0, h));
    Var update = sigmoid(slice_cols(xin, h, 2 * h) + slice_cols(sg, h, 2 * h));
    Var candidate =
        tanh(slice_cols(xin, 2 * h, 3 * h) + matmul(reset * state, tape.param(candidate_weight_)));
    return update * state + add_constant(neg(update), 1.0) * candidate;
  }

  std::size_t units() const { return units_; }
  std::size_t input_width() const { return input_weight_.value.dim(0); }

  Parameter& input_weight() { return input_weight_; }
  Parameter& gate_weight() { return gate_weight_; }
  Parameter& candidate_weight() { return candidate_weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& input_weight() const { return input_weight_; }
  const Parameter& gate_weight() const { return gate_weight_; }
  const Parameter& candidate_weight() const { return candidate_weight_; }
  const Parameter& bias() const { return bias_; }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&input_weight_);
    out.push_back(&gate_weight_);
    out.push_back(&candidate_weight_);
    out.push_back(&bias_);
  }

 private:
  std::size_t units_;
  Parameter input_weight_;
  Parameter gate_weight_;
  Parameter candidate_weight_;
  Parameter bias_;
};

/// Evaluates one GRU step on plain arrays (no gradients recorded).
inline Array gru_cell(const GruCell& cell, const Array& input, const Array& state) {
  Tape tape(false);
  return cell.forward(tape, tape.constant(input), tape.constant(state)).value();
}

}  // namespace tanflow::nn

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tan/diffcore/array.hpp"
#include "tan/diffcore/ops.hpp"
#include "tan/diffcore/tape.hpp"

namespace tanflow {

/// Sizes and constants used when building transformation stages.
struct TransformOptions {
  double leak = 0.5;                  // alpha of the leaky output unit / elementwise leaky stage
  std::size_t rnn_hidden = 16;        // recurrent transform state width
  std::size_t coupling_hidden = 256;  // coupling network hidden units (two layers)
  std::size_t shift_hidden = 256;     // recurrent shift network hidden units (two layers)
  std::size_t shift_state = 16;       // recurrent shift GRU state width
  double net_leak = 0.1;              // hidden nonlinearity of coupling / shift networks
  double init_noise = 0.01;           // scale of near-identity initialization noise
};

/// Result of a forward pass: z = q(x) and log|det dz/dx| per instance.
struct FlowOutput {
  Var z;
  Var logdet;
};

/// An invertible map R^d -> R^d acting on the rows of a [batch, d] matrix.
class Transform {
 public:
  Transform(std::string name, std::size_t dim) : name_(std::move(name)), dim_(dim) {}
  virtual ~Transform() = default;

  virtual std::string_view kind() const = 0;
  virtual FlowOutput forward(Tape& tape, Var x) const = 0;
  virtual Array inverse(const Array& z) const = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }

  const std::string& name() const { return name_; }
  std::size_t dim() const { return dim_; }

 protected:
  void check_input(const Array& x) const {
    if (x.rank() != 2 || x.cols() != dim_) {
      throw ContractViolation(name_ + ": expected [batch, " + std::to_string(dim_) + "] input, got " +
                              shape_string(x.shape()));
    }
  }

 private:
  std::string name_;
  std::size_t dim_;
};

/// Forward evaluation without gradients: returns (z, logdet).
inline std::pair<Array, Array> apply(const Transform& t, const Array& x) {
  Tape tape(false);
  FlowOutput out = t.forward(tape, tape.constant(x));
  return {out.z.value(), out.logdet.value()};
}

namespace detail {

inline Var zero_logdet(Tape& tape, std::size_t m) { return tape.constant(Array(Shape{m})); }

}  // namespace detail

}  // namespace tanflow

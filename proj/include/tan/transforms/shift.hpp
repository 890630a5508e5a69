#pragma once

#include <string>
#include <vector>

#include "tan/diffcore/rng.hpp"
#include "tan/nn.hpp"
#include "tan/transforms/transform.hpp"

namespace tanflow {

/// Additive shift driven by a recurrence over earlier coordinates:
///   z_i = x_i + m(s_{i-1}),   s_i = g(x_i, s_{i-1}),   s_0 = 0
/// g is a GRU cell and m a fully connected network. The Jacobian is unit
/// lower triangular, so log|det| is exactly zero.
class RecurrentShift final : public Transform {
 public:
  RecurrentShift(std::string name, std::size_t dim, std::size_t state_units, std::size_t hidden,
                 double net_leak, RandomStream rng, double output_gain = 0.01)
      : Transform(name, dim),
        cell_(name + ".gru", 1, state_units, rng.split("gru")),
        shift_net_(name + ".net", {state_units, hidden, hidden, 1}, rng.split("net"), net_leak,
                   output_gain) {}

  std::string_view kind() const override { return "RecurrentShift"; }

  FlowOutput forward(Tape& tape, Var x) const override {
    check_input(x.value());
    const std::size_t d = dim();
    const std::size_t m = x.value().rows();
    const std::size_t h = cell_.units();
    // States only depend on x, so the shift network runs once over all steps.
    std::vector<Var> states{tape.constant(Array(Shape{m, h}))};
    for (std::size_t i = 0; i + 1 < d; ++i) {
      Var xi = reshape(column(x, i), Shape{m, 1});
      states.push_back(cell_.forward(tape, xi, states.back()));
    }
    Var stacked = reshape(concat_cols(states), Shape{m * d, h});
    Var shifts = reshape(shift_net_.forward(tape, stacked), Shape{m, d});
    return {x + shifts, detail::zero_logdet(tape, m)};
  }

  Array inverse(const Array& z) const override {
    check_input(z);
    const std::size_t d = dim();
    const std::size_t m = z.rows();
    Tape tape(false);
    Var state = tape.constant(Array(Shape{m, cell_.units()}));
    Array x(z.shape());
    for (std::size_t i = 0; i < d; ++i) {
      const Array shift = shift_net_.forward(tape, state).value();
      Array xi(Shape{m, 1});
      for (std::size_t r = 0; r < m; ++r) {
        xi[r] = z(r, i) - shift[r];
        x(r, i) = xi[r];
      }
      if (i + 1 < d) state = cell_.forward(tape, tape.constant(std::move(xi)), state);
    }
    return x;
  }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> out;
    cell_.collect(out);
    shift_net_.collect(out);
    return out;
  }

  nn::GruCell& cell() { return cell_; }
  nn::Mlp& shift_net() { return shift_net_; }

 private:
  nn::GruCell cell_;
  nn::Mlp shift_net_;
};

}  // namespace tanflow

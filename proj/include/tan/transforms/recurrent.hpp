#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tan/diffcore/rng.hpp"
#include "tan/nn.hpp"
#include "tan/transforms/transform.hpp"

namespace tanflow {

/// Recurrent transformation scanning the coordinates in order:
///   z_i = r_a(y x_i + w . s_{i-1} + b)
///   s_i = relu(u x_i + s_{i-1} V + a),   s_0 = 0
/// with scalars y, b, vectors w, u, a of width rho and V: [rho, rho]. The
/// Jacobian is lower triangular with diagonal y r_a'(pre_i).
class RecurrentTransform final : public Transform {
 public:
  RecurrentTransform(std::string name, std::size_t dim, std::size_t hidden, double leak,
                     RandomStream rng, double noise = 0.01)
      : Transform(name, dim),
        leak_(leak),
        scale_(name + ".y", Array::vector({1.0})),
        offset_(name + ".b", Array(Shape{1})),
        out_weight_(name + ".w", nn::random_normal(Shape{hidden}, rng, noise)),
        in_weight_(name + ".u", nn::random_normal(Shape{hidden}, rng, noise)),
        recurrent_weight_(name + ".v", nn::random_normal(Shape{hidden, hidden}, rng, noise)),
        state_bias_(name + ".a", nn::random_normal(Shape{hidden}, rng, noise)) {
    if (!(leak > 0.0 && leak < 1.0)) throw ContractViolation(this->name() + ": leak must lie in (0, 1)");
  }

  std::string_view kind() const override { return "Recurrent"; }

  FlowOutput forward(Tape& tape, Var x) const override {
    check_input(x.value());
    check_scale();
    const std::size_t d = dim();
    const std::size_t m = x.value().rows();
    const std::size_t rho = hidden();
    Var y = broadcast_scalar(tape.param(scale_), Shape{m});
    Var b = broadcast_scalar(tape.param(offset_), Shape{m});
    Var w = reshape(tape.param(out_weight_), Shape{rho, 1});
    Var u = reshape(tape.param(in_weight_), Shape{1, rho});
    Var v = tape.param(recurrent_weight_);
    Var a = broadcast_rows(tape.param(state_bias_), m);

    Var state = tape.constant(Array(Shape{m, rho}));
    std::vector<Var> outputs, slopes;
    for (std::size_t i = 0; i < d; ++i) {
      Var xi = column(x, i);
      Var pre = xi * y + reshape(matmul(state, w), Shape{m}) + b;
      outputs.push_back(leaky_relu(pre, leak_));
      slopes.push_back(log_leaky_slope(pre, leak_));
      if (i + 1 < d) state = relu(matmul(reshape(xi, Shape{m, 1}), u) + matmul(state, v) + a);
    }
    Var scale_term = broadcast_scalar(scale(log_abs(tape.param(scale_)), static_cast<double>(d)), Shape{m});
    Var logdet = scale_term + row_sum(stack_columns(slopes));
    return {stack_columns(outputs), logdet};
  }

  Array inverse(const Array& z) const override {
    check_input(z);
    check_scale();
    const std::size_t d = dim();
    const std::size_t rho = hidden();
    const double y = scale_.value[0];
    const double b = offset_.value[0];
    Array x(z.shape());
    std::vector<double> state(rho), next(rho);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      std::fill(state.begin(), state.end(), 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        double ws = 0.0;
        for (std::size_t k = 0; k < rho; ++k) ws += state[k] * out_weight_.value[k];
        const double xi = (leaky_inverse(z(r, i), leak_) - ws - b) / y;
        x(r, i) = xi;
        for (std::size_t k = 0; k < rho; ++k) {
          double acc = xi * in_weight_.value[k] + state_bias_.value[k];
          for (std::size_t j = 0; j < rho; ++j) acc += state[j] * recurrent_weight_.value(j, k);
          next[k] = acc > 0.0 ? acc : 0.0;
        }
        state.swap(next);
      }
    }
    return x;
  }

  std::vector<Parameter*> parameters() override {
    return {&scale_, &offset_, &out_weight_, &in_weight_, &recurrent_weight_, &state_bias_};
  }

  std::size_t hidden() const { return out_weight_.value.size(); }
  double leak() const { return leak_; }

  Parameter& y() { return scale_; }
  Parameter& b() { return offset_; }
  Parameter& w() { return out_weight_; }
  Parameter& u() { return in_weight_; }
  Parameter& v() { return recurrent_weight_; }
  Parameter& a() { return state_bias_; }

 private:
  void check_scale() const {
    if (scale_.value[0] == 0.0) throw SingularityError(name() + ": scalar y is zero");
  }

  double leak_;
  Parameter scale_;
  Parameter offset_;
  Parameter out_weight_;
  Parameter in_weight_;
  Parameter recurrent_weight_;
  Parameter state_bias_;
};

}  // namespace tanflow

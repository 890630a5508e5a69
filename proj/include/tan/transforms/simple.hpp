#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tan/transforms/transform.hpp"

namespace tanflow {

/// (x_1, ..., x_d) -> (x_d, ..., x_1).
class Reversal final : public Transform {
 public:
  Reversal(std::string name, std::size_t dim) : Transform(std::move(name), dim) {}

  std::string_view kind() const override { return "Reversal"; }

  FlowOutput forward(Tape& tape, Var x) const override {
    check_input(x.value());
    const std::size_t m = x.value().rows();
    return {gather(x, index(m), Shape{m, dim()}), detail::zero_logdet(tape, m)};
  }

  Array inverse(const Array& z) const override {
    check_input(z);
    Array x(z.shape());
    const std::size_t d = dim();
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t i = 0; i < d; ++i) x(r, i) = z(r, d - 1 - i);
    return x;
  }

 private:
  std::vector<std::ptrdiff_t> index(std::size_t m) const {
    const std::size_t d = dim();
    std::vector<std::ptrdiff_t> idx(m * d);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t i = 0; i < d; ++i) idx[r * d + i] = static_cast<std::ptrdiff_t>(r * d + d - 1 - i);
    return idx;
  }
};

/// x -> x * exp(s) with a learned vector s; log|det| = sum(s).
class Rescale final : public Transform {
 public:
  Rescale(std::string name, std::size_t dim)
      : Transform(name, dim), log_scale_(name + ".s", Array(Shape{dim})) {}

  std::string_view kind() const override { return "Rescale"; }

  FlowOutput forward(Tape& tape, Var x) const override {
    check_input(x.value());
    const std::size_t m = x.value().rows();
    Var s = tape.param(log_scale_);
    Var z = x * broadcast_rows(exp(s), m);
    return {z, broadcast_scalar(sum(s), Shape{m})};
  }

  Array inverse(const Array& z) const override {
    check_input(z);
    Array x(z.shape());
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t i = 0; i < dim(); ++i) x(r, i) = z(r, i) * std::exp(-log_scale_.value[i]);
    return x;
  }

  std::vector<Parameter*> parameters() override { return {&log_scale_}; }

  Parameter& log_scale() { return log_scale_; }

 private:
  Parameter log_scale_;
};

/// Elementwise leaky rectifier z_i = r_a(x_i); log|det| = sum ln r_a'(x_i).
class ElementwiseLeaky final : public Transform {
 public:
  ElementwiseLeaky(std::string name, std::size_t dim, double leak)
      : Transform(std::move(name), dim), leak_(leak) {
    if (!(leak > 0.0 && leak < 1.0)) throw ContractViolation(this->name() + ": leak must lie in (0, 1)");
  }

  std::string_view kind() const override { return "ElementwiseLeaky"; }

  FlowOutput forward(Tape&, Var x) const override {
    check_input(x.value());
    return {leaky_relu(x, leak_), row_sum(log_leaky_slope(x, leak_))};
  }

  Array inverse(const Array& z) const override {
    check_input(z);
    Array x(z.shape());
    for (std::size_t k = 0; k < z.size(); ++k) x[k] = leaky_inverse(z[k], leak_);
    return x;
  }

  double leak() const { return leak_; }

 private:
  double leak_;
};

}  // namespace tanflow

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tan/diffcore/rng.hpp"
#include "tan/transforms/transform.hpp"

namespace tanflow {

/// Affine map z = L U x + b with L unit lower-triangular and U upper
/// triangular, so log|det| = sum_i log|U_ii| and the inverse is two
/// triangular solves. Only the strictly lower part of `lower` and the upper
/// part (with diagonal) of `upper` are read; the rest is structurally zero.
class LinearLU final : public Transform {
 public:
  LinearLU(std::string name, std::size_t dim, RandomStream rng, double noise = 0.01)
      : Transform(name, dim),
        lower_(name + ".lower", Array(Shape{dim, dim})),
        upper_(name + ".upper", Array(Shape{dim, dim})),
        shift_(name + ".shift", Array(Shape{dim})) {
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        if (j < i) lower_.value(i, j) = noise * rng.normal();
        if (j >= i) upper_.value(i, j) = (i == j ? 1.0 : 0.0) + noise * rng.normal();
      }
    }
  }

  std::string_view kind() const override { return "LinearLU"; }

  FlowOutput forward(Tape& tape, Var x) const override {
    check_input(x.value());
    check_diagonal();
    const std::size_t d = dim();
    const std::size_t m = x.value().rows();
    Var lower = gather(tape.param(lower_), lower_index(), Shape{d, d}) + tape.constant(identity());
    Var upper = gather(tape.param(upper_), upper_index(), Shape{d, d});
    Var a = matmul(lower, upper);
    Var z = matmul(x, transpose(a)) + broadcast_rows(tape.param(shift_), m);
    Var logdet = sum(log_abs(gather(tape.param(upper_), diagonal_index(), Shape{d})));
    return {z, broadcast_scalar(logdet, Shape{m})};
  }

  Array inverse(const Array& z) const override {
    check_input(z);
    check_diagonal();
    const std::size_t d = dim();
    Array x(z.shape());
    std::vector<double> w(d);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      // L w = z - b
      for (std::size_t i = 0; i < d; ++i) {
        double acc = z(r, i) - shift_.value[i];
        for (std::size_t j = 0; j < i; ++j) acc -= lower_.value(i, j) * w[j];
        w[i] = acc;
      }
      // U x = w
      for (std::size_t i = d; i-- > 0;) {
        double acc = w[i];
        for (std::size_t j = i + 1; j < d; ++j) acc -= upper_.value(i, j) * x(r, j);
        x(r, i) = acc / upper_.value(i, i);
      }
    }
    return x;
  }

  std::vector<Parameter*> parameters() override { return {&lower_, &upper_, &shift_}; }

  /// The dense matrix A = L U.
  Array matrix() const {
    const std::size_t d = dim();
    Array a(Shape{d, d});
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k <= std::min(i, j); ++k)
          a(i, j) += (k == i ? 1.0 : lower_.value(i, k)) * upper_.value(k, j);
    return a;
  }

  Parameter& lower() { return lower_; }
  Parameter& upper() { return upper_; }
  Parameter& shift() { return shift_; }

 private:
  void check_diagonal() const {
    for (std::size_t i = 0; i < dim(); ++i) {
      if (upper_.value(i, i) == 0.0) {
        throw SingularityError(name() + ": U[" + std::to_string(i) + "," + std::to_string(i) +
                               "] is zero");
      }
    }
  }

  std::vector<std::ptrdiff_t> lower_index() const {
    const std::size_t d = dim();
    std::vector<std::ptrdiff_t> idx(d * d, -1);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < i; ++j) idx[i * d + j] = static_cast<std::ptrdiff_t>(i * d + j);
    return idx;
  }

  std::vector<std::ptrdiff_t> upper_index() const {
    const std::size_t d = dim();
    std::vector<std::ptrdiff_t> idx(d * d, -1);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) idx[i * d + j] = static_cast<std::ptrdiff_t>(i * d + j);
    return idx;
  }

  std::vector<std::ptrdiff_t> diagonal_index() const {
    std::vector<std::ptrdiff_t> idx(dim());
    for (std::size_t i = 0; i < dim(); ++i) idx[i] = static_cast<std::ptrdiff_t>(i * dim() + i);
    return idx;
  }

  Array identity() const {
    Array eye(Shape{dim(), dim()});
    for (std::size_t i = 0; i < dim(); ++i) eye(i, i) = 1.0;
    return eye;
  }

  Parameter lower_;
  Parameter upper_;
  Parameter shift_;
};

}  // namespace tanflow

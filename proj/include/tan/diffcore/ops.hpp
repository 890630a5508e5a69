#pragma once

// Differentiable primitives over Var. Binary elementwise ops require equal
// shapes; broadcasting is explicit through broadcast_rows / broadcast_cols /
// broadcast_scalar so every gradient reduction is visible at the call site.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tan/diffcore/array.hpp"
#include "tan/diffcore/tape.hpp"
#include "tan/errors.hpp"

namespace tanflow {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

inline ConstMatrixMap as_matrix(const Array& a) {
  return ConstMatrixMap(a.data().data(), static_cast<Eigen::Index>(a.rows()),
                        static_cast<Eigen::Index>(a.cols()));
}

inline MatrixMap as_matrix(Array& a) {
  return MatrixMap(a.data().data(), static_cast<Eigen::Index>(a.rows()),
                   static_cast<Eigen::Index>(a.cols()));
}

// Flat elementwise views; Eigen vectorizes these where plain loops do not.
inline Eigen::Map<const Eigen::ArrayXd> flat(const Array& a) {
  return {a.data().data(), static_cast<Eigen::Index>(a.size())};
}

inline Eigen::Map<Eigen::ArrayXd> flat(Array& a) { return {a.data().data(), static_cast<Eigen::Index>(a.size())}; }

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                            " vs " + shape_string(b.shape()));
  }
}

inline void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.value().rank() != rank) {
    throw ContractViolation(std::string(op) + ": expected rank " + std::to_string(rank) +
                            ", got shape " + shape_string(a.shape()));
  }
}

// Elementwise map with derivative df(x, y) where y = f(x).
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  const Array& x = a.value();
  Array y(x.shape());
  {
    const double* __restrict xp = x.data().data();
    double* __restrict yp = y.data().data();
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) yp[i] = f(xp[i]);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, df](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double* __restrict gp = t.grad(self).data().data();
    const double* __restrict xp = t.value(ia).data().data();
    const double* __restrict yp = t.value(self).data().data();
    Array& ga = t.grad(ia);
    double* __restrict gap = ga.data().data();
    const std::size_t n = ga.size();
    for (std::size_t i = 0; i < n; ++i) gap[i] += gp[i] * df(xp[i], yp[i]);
  });
}

inline void accumulate(Tape& t, std::size_t id, const Array& g) {
  if (!t.requires_grad(id)) return;
  flat(t.grad(id)) += flat(g);
}

}  // namespace detail

/// Overflow-safe log(sum(exp(v))) by max subtraction.
inline double logsumexp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// ---------------------------------------------------------------- binary

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a, b);
  Array y = a.value();
  detail::flat(y) += detail::flat(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    detail::accumulate(t, ia, g);
    detail::accumulate(t, ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a, b);
  Array y = a.value();
  detail::flat(y) -= detail::flat(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    detail::accumulate(t, ia, g);
    if (t.requires_grad(ib)) detail::flat(t.grad(ib)) -= detail::flat(g);
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape("mul", a, b);
  Array y = a.value();
  detail::flat(y) *= detail::flat(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    if (t.requires_grad(ia)) detail::flat(t.grad(ia)) += detail::flat(g) * detail::flat(t.value(ib));
    if (t.requires_grad(ib)) detail::flat(t.grad(ib)) += detail::flat(g) * detail::flat(t.value(ia));
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ----------------------------------------------------------------- unary

inline Var scale(Var a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var neg(Var a) { return scale(a, -1.0); }
inline Var operator-(Var a) { return neg(a); }

inline Var add_constant(Var a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var exp(Var a) {
  Array y(a.shape());
  detail::flat(y) = detail::flat(a.value()).exp();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia](Tape& t, std::size_t self) {
    if (t.requires_grad(ia)) detail::flat(t.grad(ia)) += detail::flat(t.grad(self)) * detail::flat(t.value(self));
  });
}

/// Natural log; nonpositive entries raise DomainError.
inline Var log(Var a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) throw DomainError("log of nonpositive value " + std::to_string(x));
  }
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

/// log|a|; zero entries raise DomainError.
inline Var log_abs(Var a) {
  for (double x : a.value().data()) {
    if (x == 0.0) throw DomainError("log_abs of zero");
  }
  return detail::unary(a, [](double x) { return std::log(std::abs(x)); },
                       [](double x, double) { return 1.0 / x; });
}

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline double logistic(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Var sigmoid(Var a) {
  Array y(a.shape());
  detail::flat(y) = detail::flat(a.value()).logistic();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const auto y = detail::flat(t.value(self));
    detail::flat(t.grad(ia)) += detail::flat(t.grad(self)) * y * (1.0 - y);
  });
}

inline Var square(Var a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var relu(Var a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// r_alpha(t) = t for t >= 0, alpha * t otherwise. The derivative at 0 is
/// taken from the positive branch.
inline double leaky(double x, double alpha) { return x >= 0.0 ? x : alpha * x; }
inline double leaky_inverse(double y, double alpha) { return y >= 0.0 ? y : y / alpha; }
inline double leaky_slope(double x, double alpha) { return x >= 0.0 ? 1.0 : alpha; }

inline Var leaky_relu(Var a, double alpha) {
  Array y(a.shape());
  const auto x = detail::flat(a.value());
  detail::flat(y) = x.max(0.0) + alpha * x.min(0.0);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, alpha](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const auto slope = alpha + (1.0 - alpha) * (detail::flat(t.value(ia)) >= 0.0).cast<double>();
    detail::flat(t.grad(ia)) += detail::flat(t.grad(self)) * slope;
  });
}

/// ln r'_alpha(a): piecewise constant, so it carries no gradient.
inline Var log_leaky_slope(Var a, double alpha) {
  const Array& x = a.value();
  Array y(x.shape());
  const double log_alpha = std::log(alpha);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] >= 0.0 ? 0.0 : log_alpha;
  return a.tape().constant(std::move(y));
}

/// Clamp into [lo, hi]; gradient is passed only strictly inside the range.
inline Var clamp(Var a, double lo, double hi) {
  return detail::unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                       [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- linear

inline Var matmul(Var a, Var b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ContractViolation("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Array y(Shape{av.rows(), bv.cols()});
  if (av.cols() > 0 && y.size() > 0) {
    detail::as_matrix(y).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    const Array& av = t.value(ia);
    const Array& bv = t.value(ib);
    if (av.cols() == 0 || g.size() == 0) return;
    if (t.requires_grad(ia)) {
      detail::as_matrix(t.grad(ia)).noalias() +=
          detail::as_matrix(g) * detail::as_matrix(bv).transpose();
    }
    if (t.requires_grad(ib)) {
      detail::as_matrix(t.grad(ib)).noalias() +=
          detail::as_matrix(av).transpose() * detail::as_matrix(g);
    }
  });
}

/// x W + b with the bias repeated on every row. x: [m, k], W: [k, n], b: [n].
inline Var affine(Var x, Var w, Var b) {
  detail::require_rank("affine", x, 2);
  detail::require_rank("affine", w, 2);
  detail::require_rank("affine", b, 1);
  const Array& xv = x.value();
  const Array& wv = w.value();
  const Array& bv = b.value();
  if (xv.cols() != wv.rows() || bv.size() != wv.cols()) {
    throw ContractViolation("affine: " + shape_string(xv.shape()) + " x " + shape_string(wv.shape()) + " + " +
                            shape_string(bv.shape()));
  }
  Array y(Shape{xv.rows(), wv.cols()});
  auto ym = detail::as_matrix(y);
  if (xv.cols() > 0 && y.size() > 0) ym.noalias() = detail::as_matrix(xv) * detail::as_matrix(wv);
  if (y.size() > 0) ym.rowwise() += detail::flat(bv).matrix().transpose();
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(std::move(y), {x, w, b}, [ix, iw, ib](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    if (g.size() == 0) return;
    const auto gm = detail::as_matrix(g);
    if (t.value(ix).cols() > 0) {
      if (t.requires_grad(ix)) detail::as_matrix(t.grad(ix)).noalias() += gm * detail::as_matrix(t.value(iw)).transpose();
      if (t.requires_grad(iw)) detail::as_matrix(t.grad(iw)).noalias() += detail::as_matrix(t.value(ix)).transpose() * gm;
    }
    if (t.requires_grad(ib)) detail::flat(t.grad(ib)).matrix() += gm.colwise().sum().transpose();
  });
}

inline Var transpose(Var a) {
  detail::require_rank("transpose", a, 2);
  const Array& x = a.value();
  Array y(Shape{x.cols(), x.rows()});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y(c, r) = x(r, c);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Array g = t.grad(self);
    Array& ga = t.grad(ia);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(c, r) += g(r, c);
  });
}

// ------------------------------------------------------------- structural

inline Var reshape(Var a, Shape shape) {
  Array y = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia](Tape& t, std::size_t self) {
    detail::accumulate(t, ia, t.grad(self));
  });
}

/// [n] -> [m, n], repeating the vector on every row.
inline Var broadcast_rows(Var v, std::size_t m) {
  detail::require_rank("broadcast_rows", v, 1);
  const Array& x = v.value();
  const std::size_t n = x.size();
  Array y(Shape{m, n});
  for (std::size_t r = 0; r < m; ++r) std::copy(x.data().begin(), x.data().end(), y.row(r).begin());
  const std::size_t iv = v.id();
  return v.tape().record(std::move(y), {v}, [iv, m, n](Tape& t, std::size_t self) {
    if (!t.requires_grad(iv)) return;
    const Array& g = t.grad(self);
    Array& gv = t.grad(iv);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) gv[c] += g[r * n + c];
  });
}

/// [m] -> [m, n], repeating each entry across its row.
inline Var broadcast_cols(Var v, std::size_t n) {
  detail::require_rank("broadcast_cols", v, 1);
  const Array& x = v.value();
  const std::size_t m = x.size();
  Array y(Shape{m, n});
  for (std::size_t r = 0; r < m; ++r) std::fill(y.row(r).begin(), y.row(r).end(), x[r]);
  const std::size_t iv = v.id();
  return v.tape().record(std::move(y), {v}, [iv, m, n](Tape& t, std::size_t self) {
    if (!t.requires_grad(iv)) return;
    const Array& g = t.grad(self);
    Array& gv = t.grad(iv);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) gv[r] += g[r * n + c];
  });
}

/// Single-element tensor -> any shape.
inline Var broadcast_scalar(Var s, Shape shape) {
  if (s.value().size() != 1) {
    throw ContractViolation("broadcast_scalar: input shape " + shape_string(s.shape()));
  }
  Array y(std::move(shape), s.value()[0]);
  const std::size_t is = s.id();
  return s.tape().record(std::move(y), {s}, [is](Tape& t, std::size_t self) {
    if (!t.requires_grad(is)) return;
    const Array& g = t.grad(self);
    double total = 0.0;
    for (double v : g.data()) total += v;
    t.grad(is)[0] += total;
  });
}

/// Column-wise concatenation of matrices with equal row counts.
inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
  const std::size_t m = parts[0].value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    detail::require_rank("concat_cols", p, 2);
    if (p.value().rows() != m) throw ContractViolation("concat_cols: row count mismatch");
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Array y(Shape{m, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Array& x = p.value();
    const std::size_t w = x.cols();
    for (std::size_t r = 0; r < m; ++r) std::copy_n(x.row(r).begin(), w, y.row(r).begin() + offset);
    offset += w;
  }
  return parts[0].tape().record(
      std::move(y), parts, [ids = std::move(ids), widths = std::move(widths), m, total](Tape& t, std::size_t self) {
        const Array g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t w = widths[k];
          if (t.requires_grad(ids[k])) {
            Array& gp = t.grad(ids[k]);
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * total + offset + c];
          }
          offset += w;
        }
      });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

/// Columns [begin, end) of a matrix.
inline Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  detail::require_rank("slice_cols", a, 2);
  const Array& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  if (begin > end || end > n) throw ContractViolation("slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  Array y(Shape{m, w});
  for (std::size_t r = 0; r < m; ++r) std::copy_n(x.row(r).begin() + begin, w, y.row(r).begin());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, m, n, begin, w](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Array& g = t.grad(self);
    Array& ga = t.grad(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * n + begin + c] += g[r * w + c];
  });
}

/// Column j of a matrix as a vector [m].
inline Var column(Var a, std::size_t j) {
  const std::size_t m = a.value().rows();
  return reshape(slice_cols(a, j, j + 1), Shape{m});
}

/// Stacks vectors [m] as the columns of an [m, k] matrix.
inline Var stack_columns(std::span<const Var> cols) {
  std::vector<Var> parts;
  parts.reserve(cols.size());
  for (const Var& c : cols) {
    detail::require_rank("stack_columns", c, 1);
    parts.push_back(reshape(c, Shape{c.value().size(), 1}));
  }
  return concat_cols(parts);
}

/// out.flat[k] = a.flat[index[k]], or 0 where index[k] < 0.
inline Var gather(Var a, std::vector<std::ptrdiff_t> index, Shape shape) {
  if (index.size() != shape_size(shape)) throw ContractViolation("gather: index/shape size mismatch");
  const Array& x = a.value();
  Array y(std::move(shape));
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= static_cast<std::ptrdiff_t>(x.size())) {
      throw ContractViolation("gather: index out of range");
    }
    if (index[k] >= 0) y[k] = x[static_cast<std::size_t>(index[k])];
  }
  const std::size_t ia = a.id();
  auto shared = std::make_shared<const std::vector<std::ptrdiff_t>>(std::move(index));
  return a.tape().record(std::move(y), {a}, [ia, shared](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Array& g = t.grad(self);
    Array& ga = t.grad(ia);
    const auto& idx = *shared;
    for (std::size_t k = 0; k < idx.size(); ++k)
      if (idx[k] >= 0) ga[static_cast<std::size_t>(idx[k])] += g[k];
  });
}

// ------------------------------------------------------------- reductions

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Array::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double g = t.grad(self)[0];
    for (double& v : t.grad(ia).data()) v += g;
  });
}

inline Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ContractViolation("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// [m, n] -> [m], summing each row.
inline Var row_sum(Var a) {
  detail::require_rank("row_sum", a, 2);
  const Array& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  Array y(Shape{m});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += x[r * n + c];
    y[r] = s;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, m, n](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Array& g = t.grad(self);
    Array& ga = t.grad(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r];
  });
}

/// [m, n] -> [m], log-sum-exp of each row with max subtraction.
inline Var logsumexp_rows(Var a) {
  detail::require_rank("logsumexp_rows", a, 2);
  const Array& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw ContractViolation("logsumexp_rows: empty rows");
  Array y(Shape{m});
  for (std::size_t r = 0; r < m; ++r) y[r] = logsumexp(x.row(r));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, m, n](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Array& g = t.grad(self);
    const Array& x = t.value(ia);
    const Array& y = t.value(self);
    Array& ga = t.grad(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r] * std::exp(x[r * n + c] - y[r]);
  });
}

}  // namespace tanflow

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tan/errors.hpp"

namespace tanflow {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "," : "") << shape[i];
  }
  out << ']';
  return out.str();
}

/// Allocator with a fixed 64-byte boundary. Vectorized kernels peel a
/// scalar prologue up to the first aligned element, so a fixed boundary
/// keeps rounding independent of where the heap placed a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

/// Dense row-major tensor of doubles. Rank 0 is a scalar.
class Array {
 public:
  Array() : data_(1, 0.0) {}

  explicit Array(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Array(Shape shape, std::span<const double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != shape_size(shape_)) {
      throw ContractViolation("Array: " + std::to_string(data_.size()) +
                              " values do not fill shape " + shape_string(shape_));
    }
  }

  Array(Shape shape, std::initializer_list<double> data)
      : Array(std::move(shape), std::span<const double>(data.begin(), data.size())) {}

  static Array scalar(double value) { return Array(Shape{}, {value}); }

  static Array vector(std::span<const double> values) { return Array(Shape{values.size()}, values); }
  static Array vector(std::initializer_list<double> values) {
    return vector(std::span<const double>(values.begin(), values.size()));
  }

  static Array matrix(std::size_t rows, std::size_t cols, std::span<const double> values) {
    return Array(Shape{rows, cols}, values);
  }

  static Array matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ContractViolation("Array::matrix: ragged initializer");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Array(Shape{r, c}, values);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::size_t rows() const { return require_matrix(), shape_[0]; }
  std::size_t cols() const { return require_matrix(), shape_[1]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * shape_[1], shape_[1]};
  }

  double item() const {
    if (data_.size() != 1) {
      throw ContractViolation("Array::item on shape " + shape_string(shape_));
    }
    return data_[0];
  }

  Array reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ContractViolation("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    }
    Array out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  /// Rows [begin, end) of a matrix.
  Array slice_rows(std::size_t begin, std::size_t end) const {
    require_matrix();
    if (begin > end || end > shape_[0]) throw ContractViolation("slice_rows out of range");
    const std::size_t c = shape_[1];
    return Array(Shape{end - begin, c}, std::span<const double>(data_.data() + begin * c, (end - begin) * c));
  }

  /// Gathers the listed rows of a matrix, in order.
  Array take_rows(std::span<const std::size_t> indices) const {
    require_matrix();
    const std::size_t c = shape_[1];
    Array out(Shape{indices.size(), c});
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (indices[k] >= shape_[0]) throw ContractViolation("take_rows index out of range");
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[k] * c), c,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(k * c));
    }
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Array& a, const Array& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void require_matrix() const {
    if (shape_.size() != 2) {
      throw ContractViolation("expected a matrix, got shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double, AlignedAllocator<double>> data_;
};

inline std::ostream& operator<<(std::ostream& out, const Array& a) {
  out << "Array" << shape_string(a.shape()) << '{';
  const std::size_t n = std::min<std::size_t>(a.size(), 8);
  for (std::size_t i = 0; i < n; ++i) out << (i ? ", " : "") << a[i];
  if (a.size() > n) out << ", ...";
  return out << '}';
}

/// Largest absolute elementwise difference; shapes must agree.
inline double max_abs_diff(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) {
    throw ContractViolation("max_abs_diff shape mismatch " + shape_string(a.shape()) + " vs " +
                            shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace tanflow

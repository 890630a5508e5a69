#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "tan/conditionals/mog.hpp"
#include "tan/diffcore/rng.hpp"
#include "tan/nn.hpp"

namespace tanflow {

/// Sizes for the conditional models.
struct ConditionalOptions {
  std::size_t hidden = 120;       // p, width of the hidden state h_i
  std::size_t head_hidden = 120;  // units in each of the two mixture-head layers
  std::size_t components = 40;    // K
  std::size_t ram_units = 256;    // GRU width of RAM
  double head_leak = 0.1;         // leaky rectifier slope inside the mixture head
};

/// Autoregressive density over z in R^d where every conditional
/// p(z_i | z_<i) is a Gaussian mixture.
class Conditional {
 public:
  Conditional(std::string name, std::size_t dim, std::size_t components)
      : name_(std::move(name)), dim_(dim), components_(components) {
    if (dim == 0) throw ContractViolation(name_ + ": dimension must be positive");
  }
  virtual ~Conditional() = default;

  virtual std::string_view kind() const = 0;

  /// Mixture parameters for every (instance, dimension): [m * d, 3K], row
  /// r * d + i. Row r * d + i depends on z[r, <i] only.
  virtual Var mixture_params(Tape& tape, Var z) const = 0;

  /// False when no conditional depends on earlier coordinates.
  virtual bool autoregressive() const { return true; }

  virtual std::vector<Parameter*> parameters() { return {}; }

  /// Per-instance log density, [m].
  Var log_prob(Tape& tape, Var z) const {
    check_input(z.value());
    const std::size_t m = z.value().rows();
    Var lp = mog_log_prob(mixture_params(tape, z), reshape(z, Shape{m * dim_}));
    return row_sum(reshape(lp, Shape{m, dim_}));
  }

  Array log_prob(const Array& z) const {
    Tape tape(false);
    return log_prob(tape, tape.constant(z)).value();
  }

  /// Sequential sampling. Instance r, coordinate i uses rng.split(r).split(i),
  /// so results do not depend on how rows are batched.
  Array sample(std::size_t n, const RandomStream& rng) const {
    Array z(Shape{n, dim_});
    if (n == 0) return z;
    const std::size_t chunk = std::max<std::size_t>(1, 2048 / dim_);
    for (std::size_t begin = 0; begin < n; begin += chunk) {
      const std::size_t rows = std::min(chunk, n - begin);
      Array block(Shape{rows, dim_});
      Array params;
      for (std::size_t i = 0; i < dim_; ++i) {
        if (i == 0 || autoregressive()) {
          Tape tape(false);
          params = mixture_params(tape, tape.constant(block)).value();
        }
        for (std::size_t r = 0; r < rows; ++r) {
          RandomStream s = rng.split(begin + r).split(i);
          block(r, i) = mog_sample(params.row(r * dim_ + i), s);
        }
      }
      for (std::size_t k = 0; k < block.size(); ++k) z[begin * dim_ + k] = block[k];
    }
    return z;
  }

  const std::string& name() const { return name_; }
  std::size_t dim() const { return dim_; }
  std::size_t components() const { return components_; }

 protected:
  void check_input(const Array& z) const {
    if (z.rank() != 2 || z.cols() != dim_) {
      throw ContractViolation(name_ + ": expected [batch, " + std::to_string(dim_) + "] input, got " +
                              shape_string(z.shape()));
    }
  }

 private:
  std::string name_;
  std::size_t dim_;
  std::size_t components_;
};

/// Conditionals of the form p(z_i | z_<i) = MoG(head(h_i)) with a hidden
/// state h_i computed from z_<i. The head is shared across dimensions.
class HiddenStateConditional : public Conditional {
 public:
  HiddenStateConditional(std::string name, std::size_t dim, const ConditionalOptions& opt, RandomStream rng)
      : Conditional(name, dim, opt.components),
        hidden_(opt.hidden),
        head_(name + ".head", {opt.hidden, opt.head_hidden, opt.head_hidden, 3 * opt.components},
              rng.split("head"), opt.head_leak) {}

  /// h for every (instance, dimension): [m * d, p].
  virtual Var hidden(Tape& tape, Var z) const = 0;

  Var mixture_params(Tape& tape, Var z) const override { return head_.forward(tape, hidden(tape, z)); }

  /// Hidden states as an [m, d, p] array.
  Array hidden_states(const Array& z) const {
    check_input(z);
    Tape tape(false);
    return hidden(tape, tape.constant(z)).value().reshaped(Shape{z.rows(), dim(), hidden_});
  }

  std::size_t hidden_width() const { return hidden_; }
  nn::Mlp& head() { return head_; }

 protected:
  void collect_head(std::vector<Parameter*>& out) { head_.collect(out); }

 private:
  std::size_t hidden_;
  nn::Mlp head_;
};

namespace detail {

// Index map scattering a per-dimension bias b [p] to [d * p].
inline std::vector<std::ptrdiff_t> tile_index(std::size_t d, std::size_t p) {
  std::vector<std::ptrdiff_t> idx(d * p);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t c = 0; c < p; ++c) idx[i * p + c] = static_cast<std::ptrdiff_t>(c);
  return idx;
}

// H[m, d * p] = z W + tile(b), reshaped to [m * d, p].
inline Var linear_hidden(Tape& tape, Var z, Var dense, const Parameter& bias, std::size_t p) {
  const std::size_t m = z.value().rows();
  const std::size_t d = z.value().cols();
  Var b = gather(tape.param(bias), tile_index(d, p), Shape{d * p});
  return reshape(matmul(z, dense) + broadcast_rows(b, m), Shape{m * d, p});
}

}  // namespace detail

}  // namespace tanflow

#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "tan/conditionals/conditional.hpp"

namespace tanflow {

/// Linear autoregressive model: h_i = W^(i) z_<i + b with untied
/// W^(i) in R^{p x (i-1)}. All W^(i) live in one packed block of
/// d(d-1)/2 rows; row i(i-1)/2 + j holds column j of W^(i).
class LamConditional final : public HiddenStateConditional {
 public:
  LamConditional(std::string name, std::size_t dim, const ConditionalOptions& opt, RandomStream rng)
      : HiddenStateConditional(name, dim, opt, rng),
        weight_(name + ".weight", nn::random_normal(Shape{dim * (dim - 1) / 2, opt.hidden}, rng,
                                                    1.0 / std::sqrt(static_cast<double>(dim)))),
        bias_(name + ".bias", Array(Shape{opt.hidden})) {}

  std::string_view kind() const override { return "LAM"; }

  Var hidden(Tape& tape, Var z) const override {
    check_input(z.value());
    const std::size_t d = dim(), p = hidden_width();
    std::vector<std::ptrdiff_t> idx(d * d * p, -1);
    for (std::size_t i = 1; i < d; ++i)
      for (std::size_t j = 0; j < i; ++j)
        for (std::size_t c = 0; c < p; ++c)
          idx[j * d * p + i * p + c] = static_cast<std::ptrdiff_t>((i * (i - 1) / 2 + j) * p + c);
    Var dense = gather(tape.param(weight_), std::move(idx), Shape{d, d * p});
    return detail::linear_hidden(tape, z, dense, bias_, p);
  }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> out{&weight_, &bias_};
    collect_head(out);
    return out;
  }

  /// Packed row index of entry (i, j), j < i.
  static std::size_t packed_row(std::size_t i, std::size_t j) { return i * (i - 1) / 2 + j; }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;
  Parameter bias_;
};

/// Tied weights: h_i = W_<i z_<i + b with one shared W in R^{p x d}.
class TiedConditional final : public HiddenStateConditional {
 public:
  TiedConditional(std::string name, std::size_t dim, const ConditionalOptions& opt, RandomStream rng)
      : HiddenStateConditional(name, dim, opt, rng),
        weight_(name + ".weight",
                nn::random_normal(Shape{opt.hidden, dim}, rng, 1.0 / std::sqrt(static_cast<double>(dim)))),
        bias_(name + ".bias", Array(Shape{opt.hidden})) {}

  std::string_view kind() const override { return "TIED"; }

  Var hidden(Tape& tape, Var z) const override {
    check_input(z.value());
    const std::size_t d = dim(), p = hidden_width();
    std::vector<std::ptrdiff_t> idx(d * d * p, -1);
    for (std::size_t i = 1; i < d; ++i)
      for (std::size_t j = 0; j < i; ++j)
        for (std::size_t c = 0; c < p; ++c) idx[j * d * p + i * p + c] = static_cast<std::ptrdiff_t>(c * d + j);
    Var dense = gather(tape.param(weight_), std::move(idx), Shape{d, d * p});
    return detail::linear_hidden(tape, z, dense, bias_, p);
  }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> out{&weight_, &bias_};
    collect_head(out);
    return out;
  }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;
  Parameter bias_;
};

/// Recurrent model: s_1 = g(c, 0), s_i = g(z_{i-1}, s_{i-1}), h_i = P s_i,
/// with g a GRU cell, c a learned start input and P a linear projection.
class RamConditional final : public HiddenStateConditional {
 public:
  RamConditional(std::string name, std::size_t dim, const ConditionalOptions& opt, RandomStream rng)
      : HiddenStateConditional(name, dim, opt, rng),
        cell_(name + ".gru", 1, opt.ram_units, rng.split("gru")),
        projection_(name + ".proj", opt.ram_units, opt.hidden, rng.split("proj")),
        start_(name + ".start", Array(Shape{1, 1})) {}

  std::string_view kind() const override { return "RAM"; }

  Var hidden(Tape& tape, Var z) const override {
    check_input(z.value());
    const std::size_t d = dim(), m = z.value().rows();
    Var input = broadcast_scalar(tape.param(start_), Shape{m, 1});
    Var state = tape.constant(Array(Shape{m, cell_.units()}));
    std::vector<Var> states;
    for (std::size_t i = 0; i < d; ++i) {
      if (i > 0) input = reshape(column(z, i - 1), Shape{m, 1});
      state = cell_.forward(tape, input, state);
      states.push_back(state);
    }
    Var stacked = reshape(concat_cols(states), Shape{m * d, cell_.units()});
    return projection_.forward(tape, stacked);
  }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> out;
    cell_.collect(out);
    projection_.collect(out);
    out.push_back(&start_);
    collect_head(out);
    return out;
  }

  nn::GruCell& cell() { return cell_; }
  nn::Dense& projection() { return projection_; }
  Parameter& start() { return start_; }

 private:
  nn::GruCell cell_;
  nn::Dense projection_;
  Parameter start_;
};

/// d independent mixtures, one per coordinate, with no conditioning.
class MultiIndConditional final : public Conditional {
 public:
  MultiIndConditional(std::string name, std::size_t dim, const ConditionalOptions& opt, RandomStream rng)
      : Conditional(name, dim, opt.components), params_(name + ".mixture", init(dim, opt.components, rng)) {}

  std::string_view kind() const override { return "MultiInd"; }
  bool autoregressive() const override { return false; }

  Var mixture_params(Tape& tape, Var z) const override {
    check_input(z.value());
    const std::size_t m = z.value().rows(), d = dim(), w = 3 * components();
    std::vector<std::ptrdiff_t> idx(m * d * w);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t k = 0; k < d * w; ++k) idx[r * d * w + k] = static_cast<std::ptrdiff_t>(k);
    return gather(tape.param(params_), std::move(idx), Shape{m * d, w});
  }

  std::vector<Parameter*> parameters() override { return {&params_}; }

  /// [d, 3K]: one mixture parameter row per coordinate.
  Parameter& mixture() { return params_; }

 private:
  static Array init(std::size_t d, std::size_t k, RandomStream& rng) {
    Array a(Shape{d, 3 * k});
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t c = 0; c < k; ++c) a(i, k + c) = rng.normal();
    return a;
  }

  Parameter params_;
};

/// Standard normal for every coordinate; no parameters.
class SingleIndConditional final : public Conditional {
 public:
  SingleIndConditional(std::string name, std::size_t dim) : Conditional(std::move(name), dim, 1) {}

  std::string_view kind() const override { return "SingleInd"; }
  bool autoregressive() const override { return false; }

  Var mixture_params(Tape& tape, Var z) const override {
    check_input(z.value());
    return tape.constant(Array(Shape{z.value().rows() * dim(), 3}));
  }
};

/// Names accepted by make_conditional, in table order.
inline const std::vector<std::string>& conditional_names() {
  static const std::vector<std::string> names = {"LAM", "RAM", "TIED", "MultiInd", "SingleInd"};
  return names;
}

/// Canonical spelling of a conditional name ("Tied" is accepted for TIED).
inline std::string canonical_conditional(std::string_view kind) {
  if (kind == "Tied") return "TIED";
  for (const std::string& n : conditional_names())
    if (kind == n) return n;
  throw ParseError("unknown conditional model \"" + std::string(kind) + "\"; expected one of LAM, RAM, TIED, "
                   "MultiInd, SingleInd");
}

inline std::unique_ptr<Conditional> make_conditional(std::string_view kind, std::size_t dim,
                                                     const ConditionalOptions& opt, const RandomStream& rng) {
  const std::string name = canonical_conditional(kind);
  const std::string id = "cond." + name;
  if (name == "LAM") return std::make_unique<LamConditional>(id, dim, opt, rng);
  if (name == "RAM") return std::make_unique<RamConditional>(id, dim, opt, rng);
  if (name == "TIED") return std::make_unique<TiedConditional>(id, dim, opt, rng);
  if (name == "MultiInd") return std::make_unique<MultiIndConditional>(id, dim, opt, rng);
  return std::make_unique<SingleIndConditional>(id, dim);
}

}  // namespace tanflow

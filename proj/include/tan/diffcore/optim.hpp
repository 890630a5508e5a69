#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tan/diffcore/array.hpp"
#include "tan/diffcore/tape.hpp"
#include "tan/errors.hpp"

namespace tanflow {

/// Joint Euclidean norm over a set of gradients.
inline double global_norm(std::span<const Array> grads) {
  double s = 0.0;
  for (const Array& g : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

inline double global_grad_norm(std::span<Parameter* const> params) {
  double s = 0.0;
  for (const Parameter* p : params)
    for (double v : p->grad.data()) s += v * v;
  return std::sqrt(s);
}

/// Rescales every gradient by max_norm / norm when the joint norm exceeds
/// max_norm. Returns the norm before clipping.
inline double clip_global_norm(std::span<Array> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractViolation("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Array& g : grads)
      for (double& v : g.data()) v *= factor;
  }
  return norm;
}

inline double clip_global_norm(std::span<Parameter* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractViolation("clip_global_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Parameter* p : params)
      for (double& v : p->grad.data()) v *= factor;
  }
  return norm;
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter first/second moments, zero-initialized, plus the step count.
struct AdamState {
  std::vector<Array> first;
  std::vector<Array> second;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::span<Parameter* const> params) {
    for (const Parameter* p : params) {
      first.emplace_back(p->value.shape());
      second.emplace_back(p->value.shape());
    }
  }
};

/// One bias-corrected Adam update of every parameter from its `grad`.
inline void adam_step(std::span<Parameter* const> params, AdamState& state, double lr,
                      const AdamOptions& opt = {}) {
  if (state.first.size() != params.size()) {
    throw ContractViolation("adam_step: state tracks " + std::to_string(state.first.size()) +
                            " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Array& m = state.first[k];
    Array& v = state.second[k];
    if (p.grad.shape() != p.value.shape() || m.shape() != p.value.shape()) {
      throw ContractViolation("adam_step: shape mismatch for parameter " + p.name);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
  }
}

}  // namespace tanflow

#pragma once

// Mixture-of-Gaussians densities. A parameter row holds 3K numbers laid out
// as [logits (K) | means (K) | log-scales (K)].

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "tan/diffcore/ops.hpp"
#include "tan/diffcore/rng.hpp"

namespace tanflow {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)
inline constexpr double kLogScaleBound = 7.0;

/// Log density of the standard normal.
inline double standard_normal_log_pdf(double v) { return -kHalfLog2Pi - 0.5 * v * v; }

/// Softmax of the K logits of one parameter row.
inline std::vector<double> mixture_weights(std::span<const double> row) {
  const std::size_t k = row.size() / 3;
  const double lse = logsumexp(row.subspan(0, k));
  std::vector<double> w(k);
  for (std::size_t c = 0; c < k; ++c) w[c] = std::exp(row[c] - lse);
  return w;
}

inline double clamp_log_scale(double s) { return std::clamp(s, -kLogScaleBound, kLogScaleBound); }

/// log sum_k softmax(logits)_k N(value; mean_k, exp(2 log_scale_k)).
inline double mog_log_prob(double value, std::span<const double> row) {
  const std::size_t k = row.size() / 3;
  if (k == 0 || row.size() != 3 * k) throw ContractViolation("mixture row must hold 3K >= 3 values");
  const double lse_logits = logsumexp(row.subspan(0, k));
  std::vector<double> terms(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double ls = clamp_log_scale(row[2 * k + c]);
    const double u = (value - row[k + c]) * std::exp(-ls);
    terms[c] = row[c] - lse_logits - kHalfLog2Pi - ls - 0.5 * u * u;
  }
  return logsumexp(terms);
}

/// Draws one value: a component from the softmax weights, then a Gaussian.
inline double mog_sample(std::span<const double> row, RandomStream& rng) {
  const std::size_t k = row.size() / 3;
  const std::vector<double> w = mixture_weights(row);
  double u = rng.uniform();
  std::size_t pick = k - 1;
  for (std::size_t c = 0; c < k; ++c) {
    if (u < w[c]) {
      pick = c;
      break;
    }
    u -= w[c];
  }
  return row[k + pick] + std::exp(clamp_log_scale(row[2 * k + pick])) * rng.normal();
}

/// Row-wise mixture log density. params: [n, 3K], values: [n] -> [n].
/// Gradients flow to both the parameters and the values.
inline Var mog_log_prob(Var params, Var values) {
  using Block = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Strided = Eigen::Map<const Block, 0, Eigen::OuterStride<>>;
  using StridedOut = Eigen::Map<Block, 0, Eigen::OuterStride<>>;
  const Array& P = params.value();
  const Array& v = values.value();
  if (P.rank() != 2 || P.cols() % 3 != 0 || P.cols() == 0) {
    throw ContractViolation("mog_log_prob: parameters must be [n, 3K], got " + shape_string(P.shape()));
  }
  const auto n = static_cast<Eigen::Index>(P.rows());
  const auto k = static_cast<Eigen::Index>(P.cols() / 3);
  if (v.size() != P.rows()) {
    throw ContractViolation("mog_log_prob: " + std::to_string(v.size()) + " values for " +
                            std::to_string(n) + " parameter rows");
  }
  Array out(Shape{P.rows()});
  if (n == 0) return params.tape().constant(std::move(out));
  const Eigen::OuterStride<> stride(3 * k);
  const Strided logits(P.data().data(), n, k, stride);
  const Strided means(P.data().data() + k, n, k, stride);
  const Strided raw_scales(P.data().data() + 2 * k, n, k, stride);
  const auto vv = detail::flat(v);

  const Eigen::ArrayXd lmax = logits.rowwise().maxCoeff();
  Block soft = (logits.colwise() - lmax).exp();
  const Eigen::ArrayXd lsum = soft.rowwise().sum();
  soft.colwise() /= lsum;
  const Eigen::ArrayXd lse = lmax + lsum.log();
  const Block log_scales = raw_scales.max(-kLogScaleBound).min(kLogScaleBound);
  const Block inv = (-log_scales).exp();
  const Block u = ((-means).colwise() + vv) * inv;
  Block terms = (logits - log_scales - 0.5 * u.square()).colwise() - (lse + kHalfLog2Pi);
  const Eigen::ArrayXd tmax = terms.rowwise().maxCoeff();
  terms = (terms.colwise() - tmax).exp();
  const Eigen::ArrayXd tsum = terms.rowwise().sum();
  detail::flat(out) = tmax + tsum.log();
  if (!params.tape().recording()) return params.tape().constant(std::move(out));

  Block resp = terms.colwise() / tsum;
  const std::size_t ip = params.id(), iv = values.id();
  return params.tape().record(
      std::move(out), {params, values},
      [ip, iv, n, k, resp = std::move(resp), soft = std::move(soft), u, inv](Tape& t, std::size_t self) {
        const auto g = detail::flat(t.grad(self));
        const Block gam = resp.colwise() * g;
        const Block gu_inv = gam * u * inv;
        if (t.requires_grad(iv)) detail::flat(t.grad(iv)) -= gu_inv.rowwise().sum();
        if (!t.requires_grad(ip)) return;
        Array& gp = t.grad(ip);
        const Eigen::OuterStride<> stride(3 * k);
        StridedOut(gp.data().data(), n, k, stride) += (resp - soft).colwise() * g;
        StridedOut(gp.data().data() + k, n, k, stride) += gu_inv;
        const Strided raw(t.value(ip).data().data() + 2 * k, n, k, stride);
        const auto inside = (raw > -kLogScaleBound && raw < kLogScaleBound).template cast<double>();
        StridedOut(gp.data().data() + 2 * k, n, k, stride) += gam * (u.square() - 1.0) * inside;
      });
}

}  // namespace tanflow

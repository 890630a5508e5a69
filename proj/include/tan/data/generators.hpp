#pragma once

// Synthetic benchmarks: a Markov chain of noisy sinusoids, a star-shaped
// graphical model with step-function fringes, and a 3-dimensional
// trimodal distribution.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tan/data/dataset.hpp"

namespace tanflow {

/// Half-width of the central 50% interval of the standard normal.
inline constexpr double kCentralHalf = 0.6744897501960817;

struct GeneratorSpec {
  std::string kind = "markov";  // markov | star | trimodal
  std::size_t dim = 32;
  std::size_t n = 100000;
  double sigma = 0.1;     // markov random-walk / star fringe noise
  double epsilon = 0.05;  // trimodal noise
  std::uint64_t seed = 0;
  bool permute = true;    // apply the fixed seeded column permutation
  SplitFractions fractions{};
  double outlier_fraction = 0.0;  // rows replaced by labelled outliers before splitting

  // Overrides for tests.
  std::optional<double> force_y1, force_y2, force_y3;  // markov latent draws
  bool zero_star_weights = false;                      // star: w_j = 0

  void validate() const {
    if (n == 0) throw ContractViolation("generator needs n >= 1");
    if (kind == "markov") {
      if (dim <= 3) throw ContractViolation("markov generator requires d > 3, got " + std::to_string(dim));
    } else if (kind == "star") {
      if (dim <= 4) throw ContractViolation("star generator requires d > 4, got " + std::to_string(dim));
    } else if (kind == "trimodal") {
      if (dim != 3) throw ContractViolation("trimodal generator is 3-dimensional, got d=" + std::to_string(dim));
      if (!(epsilon >= 0.0)) throw ContractViolation("trimodal epsilon must be nonnegative");
    } else {
      throw ContractViolation("unknown generator \"" + kind + "\" (expected markov, star or trimodal)");
    }
    if (!(sigma >= 0.0)) throw ContractViolation("sigma must be nonnegative");
    if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0))
      throw ContractViolation("outlier fraction must lie in [0, 1)");
  }
};

/// Piecewise-constant function with equal-width intervals on [lo, hi],
/// held flat outside.
struct StepFunction {
  double lo = -6.0, hi = 6.0;
  std::vector<double> levels;

  double operator()(double t) const {
    const double w = (hi - lo) / static_cast<double>(levels.size());
    const double pos = std::floor((t - lo) / w);
    const auto k = static_cast<std::ptrdiff_t>(std::clamp(pos, 0.0, static_cast<double>(levels.size() - 1)));
    return levels[static_cast<std::size_t>(k)];
  }
};

/// Fixed structure of the star model: one step function and one 4-vector
/// per fringe node.
struct StarStructure {
  std::vector<StepFunction> f;
  std::vector<std::array<double, 4>> w;
};

inline StarStructure star_structure(const GeneratorSpec& spec) {
  RandomStream rng = RandomStream(spec.seed).split("star-structure");
  StarStructure s;
  for (std::size_t j = 4; j < spec.dim; ++j) {
    StepFunction f;
    f.levels.resize(32);
    for (double& l : f.levels) l = rng.normal();
    std::array<double, 4> w{};
    for (double& v : w) v = spec.zero_star_weights ? 0.0 : 0.5 * rng.normal();
    s.f.push_back(std::move(f));
    s.w.push_back(w);
  }
  return s;
}

/// Unpermuted rows y (n x d).
inline Array generate_raw(const GeneratorSpec& spec) {
  spec.validate();
  const std::size_t d = spec.dim, n = spec.n;
  Array y(Shape{n, d});
  const RandomStream rows = RandomStream(spec.seed).split("rows");
  if (spec.kind == "markov") {
    for (std::size_t r = 0; r < n; ++r) {
      RandomStream s = rows.split(r);
      const double y1 = s.normal(), y2 = s.normal(), y3 = s.normal();
      const double a = spec.force_y1.value_or(y1), f = spec.force_y2.value_or(y2), b = spec.force_y3.value_or(y3);
      y(r, 0) = a, y(r, 1) = f, y(r, 2) = b;
      double eps = 0.0;
      for (std::size_t i = 3; i < d; ++i) {
        const double g = d == 4 ? 0.0 : static_cast<double>(i - 3) / static_cast<double>(d - 4);
        eps += spec.sigma * s.normal();
        y(r, i) = a * std::sin(f * g + b) + eps;
      }
    }
  } else if (spec.kind == "star") {
    const StarStructure st = star_structure(spec);
    for (std::size_t r = 0; r < n; ++r) {
      RandomStream s = rows.split(r);
      for (std::size_t c = 0; c < 4; ++c) y(r, c) = s.normal();
      for (std::size_t j = 4; j < d; ++j) {
        const auto& w = st.w[j - 4];
        const double t = w[0] * y(r, 0) + w[1] * y(r, 1) + w[2] * y(r, 2) + w[3] * y(r, 3);
        y(r, j) = st.f[j - 4](t) + spec.sigma * s.normal();
      }
    }
  } else {
    for (std::size_t r = 0; r < n; ++r) {
      RandomStream s = rows.split(r);
      const double x1 = s.normal();
      y(r, 0) = x1;
      y(r, 1) = (x1 >= 0.0 ? 1.0 : -1.0) + spec.epsilon * s.normal();
      y(r, 2) = (std::abs(x1) < kCentralHalf ? 1.0 : 0.0) + spec.epsilon * s.normal();
    }
  }
  return y;
}

/// Replaces a fraction of rows with far-away points and returns 0/1 labels.
/// Outlier coordinates are drawn with magnitude in [low, high] and a random
/// sign.
inline std::vector<int> inject_outliers(Array& x, double fraction, std::uint64_t seed, double low = 6.0,
                                        double high = 10.0) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ContractViolation("outlier fraction must lie in [0, 1)");
  const std::size_t n = x.rows();
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  RandomStream rng = RandomStream(seed).split("outliers");
  const std::vector<std::size_t> order = random_permutation(n, rng.split("rows"));
  std::vector<int> labels(n, 0);
  RandomStream values = rng.split("values");
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t r = order[k];
    labels[r] = 1;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double mag = values.uniform(low, high);
      x(r, c) = values.uniform() < 0.5 ? -mag : mag;
    }
  }
  return labels;
}

/// Generates, permutes columns and splits. No standardization is applied;
/// the recorded statistics are the identity.
inline Dataset generate(const GeneratorSpec& spec) {
  Array y = generate_raw(spec);
  std::vector<std::size_t> perm(spec.dim);
  for (std::size_t k = 0; k < spec.dim; ++k) perm[k] = k;
  if (spec.permute && spec.kind != "trimodal") perm = random_permutation(spec.dim, RandomStream(spec.seed).split("permutation"));
  Array x(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t k = 0; k < spec.dim; ++k) x(r, k) = y(r, perm[k]);
  std::vector<int> labels;
  if (spec.outlier_fraction > 0.0) labels = inject_outliers(x, spec.outlier_fraction, spec.seed);
  Dataset ds = split(x, spec.fractions, spec.seed, labels);
  ds.permutation = perm;
  std::vector<std::pair<std::string, std::string>> head = {
      {"generator", spec.kind},         {"generator.dim", std::to_string(spec.dim)},
      {"generator.n", std::to_string(spec.n)}, {"generator.seed", std::to_string(spec.seed)},
      {"generator.sigma", format_real(spec.sigma)}, {"generator.epsilon", format_real(spec.epsilon)},
      {"generator.outliers", format_real(spec.outlier_fraction)}};
  ds.provenance.insert(ds.provenance.begin(), head.begin(), head.end());
  return ds;
}

}  // namespace tanflow

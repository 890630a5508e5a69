#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tan/data/dataset.hpp"

namespace tanflow {

struct PreprocessOptions {
  std::size_t distinct_threshold = 32;  // drop columns with at most this many distinct values
  bool standardize = true;
  double noise = 0.01;                  // stddev of Gaussian noise added to the train split
  SplitFractions fractions{};
  std::uint64_t seed = 0;
};

/// Splits, then decides column drops and standardization from the train
/// split alone, then adds noise to the train split. Each step is recorded
/// in the provenance.
inline Dataset preprocess(const Array& matrix, const PreprocessOptions& opt, const std::vector<int>& labels = {}) {
  if (matrix.rank() != 2 || matrix.rows() < 2) throw ContractViolation("preprocess needs at least 2 rows");
  Dataset raw = split(matrix, opt.fractions, opt.seed, labels);
  const Array& tr = raw.train;
  const std::size_t n = tr.rows(), d = tr.cols();

  std::vector<std::size_t> keep;
  std::vector<double> mean, sd;
  std::string dropped;
  for (std::size_t c = 0; c < d; ++c) {
    std::set<double> distinct;
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (distinct.size() <= opt.distinct_threshold) distinct.insert(tr(r, c));
      m += tr(r, c);
    }
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t r = 0; r < n; ++r) v += (tr(r, c) - m) * (tr(r, c) - m);
    const double s = std::sqrt(v / static_cast<double>(n));
    std::string reason;
    if (!(s > 0.0)) reason = "constant";
    else if (distinct.size() <= opt.distinct_threshold) reason = "discrete(" + std::to_string(distinct.size()) + ")";
    if (!reason.empty()) {
      dropped += (dropped.empty() ? "" : " ") + std::to_string(c) + ":" + reason;
      continue;
    }
    keep.push_back(c);
    mean.push_back(opt.standardize ? m : 0.0);
    sd.push_back(opt.standardize ? s : 1.0);
  }
  if (keep.empty()) throw ContractViolation("preprocess: every column was dropped (" + dropped + ")");

  auto transform = [&](const Array& a) {
    Array out(Shape{a.rows(), keep.size()});
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t k = 0; k < keep.size(); ++k) out(r, k) = (a(r, keep[k]) - mean[k]) / sd[k];
    return out;
  };
  Dataset ds;
  ds.train = transform(raw.train);
  ds.validation = transform(raw.validation);
  ds.test = transform(raw.test);
  ds.train_labels = std::move(raw.train_labels);
  ds.validation_labels = std::move(raw.validation_labels);
  ds.test_labels = std::move(raw.test_labels);
  ds.mean = mean;
  ds.stddev = sd;
  ds.permutation = keep;
  ds.provenance = raw.provenance;
  ds.note("preprocess.kept_columns", detail::join_ints(keep));
  ds.note("preprocess.dropped_columns", dropped.empty() ? "none" : dropped);
  ds.note("preprocess.distinct_threshold", std::to_string(opt.distinct_threshold));
  ds.note("preprocess.standardize", opt.standardize ? "train-split mean/stddev" : "off");
  if (opt.noise > 0.0) {
    RandomStream rng = RandomStream(opt.seed).split("noise");
    for (double& v : ds.train.data()) v += opt.noise * rng.normal();
    ds.note("preprocess.train_noise", format_real(opt.noise));
  } else {
    ds.note("preprocess.train_noise", "off");
  }
  return ds;
}

}  // namespace tanflow

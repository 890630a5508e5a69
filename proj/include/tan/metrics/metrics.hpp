#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "tan/data/delimited.hpp"
#include "tan/model/tan_model.hpp"

namespace tanflow {

/// Mean log-likelihood with twice its standard error.
struct EvalReport {
  std::string model;
  std::string dataset;
  double mean = 0.0;
  double two_se = 0.0;
  std::size_t n = 0;
};

/// Two-pass mean and sample standard deviation; the standard error is
/// zero for a single instance.
inline EvalReport mean_ll_report(std::span<const double> lls, std::string model = {}, std::string dataset = {}) {
  if (lls.empty()) throw ContractViolation("mean_ll_report needs at least one instance");
  EvalReport r{std::move(model), std::move(dataset), 0.0, 0.0, lls.size()};
  for (double v : lls) r.mean += v;
  r.mean /= static_cast<double>(lls.size());
  if (lls.size() > 1) {
    double ss = 0.0;
    for (double v : lls) ss += (v - r.mean) * (v - r.mean);
    const double sd = std::sqrt(ss / static_cast<double>(lls.size() - 1));
    r.two_se = 2.0 * sd / std::sqrt(static_cast<double>(lls.size()));
  }
  return r;
}

inline EvalReport mean_ll_report(const TanModel& model, const Array& test, std::string model_name = {},
                                 std::string dataset = {}, std::size_t workers = 1) {
  const Array lp = model.log_prob(test, workers);
  return mean_ll_report(lp.data(), std::move(model_name), std::move(dataset));
}

inline std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << r.model << " on " << r.dataset << ": mean log-likelihood " << r.mean << " +- " << r.two_se
      << " (n=" << r.n << ")";
  return out.str();
}

inline std::string report_row(const EvalReport& r) {
  return r.model + "," + r.dataset + "," + format_real(r.mean) + "," + format_real(r.two_se) + "," + std::to_string(r.n);
}

inline constexpr const char* kReportHeader = "model,dataset,mean,two_se,n";

/// Anomaly scores: the negative log density, larger is more anomalous.
inline std::vector<double> anomaly_scores(const TanModel& model, const Array& x, std::size_t workers = 1) {
  const Array lp = model.log_prob(x, workers);
  std::vector<double> s(lp.size());
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = -lp[k];
  return s;
}

/// Average precision of a ranking by descending score. Ties keep input
/// order.
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractViolation("average_precision: scores and labels differ in length");
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ContractViolation("average_precision: labels must be 0 or 1");
    positives += static_cast<std::size_t>(l);
  }
  if (positives == 0) throw UndefinedMetric("average precision is undefined without positive labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

/// Test log-likelihoods keyed by (transformation, conditional, dataset).
using GridResults = std::map<std::tuple<std::string, std::string, std::string>, double>;

/// S(t, m): mean over datasets of exp(l_{t,m,D} - max_{a,b} l_{a,b,D}).
/// Returned as rows per transformation, columns per conditional.
inline std::vector<std::vector<double>> grid_score(const GridResults& lls, const std::vector<std::string>& transforms,
                                                   const std::vector<std::string>& conditionals,
                                                   const std::vector<std::string>& datasets) {
  if (transforms.empty() || conditionals.empty() || datasets.empty()) throw ContractViolation("grid_score: empty grid");
  std::vector<std::vector<double>> s(transforms.size(), std::vector<double>(conditionals.size(), 0.0));
  for (const std::string& d : datasets) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& t : transforms)
      for (const auto& m : conditionals) {
        auto it = lls.find({t, m, d});
        if (it == lls.end())
          throw ContractViolation("grid_score: missing cell (" + t + ", " + m + ", " + d + ")");
        best = std::max(best, it->second);
      }
    for (std::size_t i = 0; i < transforms.size(); ++i)
      for (std::size_t j = 0; j < conditionals.size(); ++j)
        s[i][j] += std::exp(lls.at({transforms[i], conditionals[j], d}) - best);
  }
  for (auto& row : s)
    for (double& v : row) v /= static_cast<double>(datasets.size());
  return s;
}

}  // namespace tanflow

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tan/data/delimited.hpp"
#include "tan/diffcore/array.hpp"
#include "tan/diffcore/rng.hpp"

namespace tanflow {

/// Train / validation / test matrices with the statistics and provenance
/// needed to reproduce them.
struct Dataset {
  Array train;
  Array validation;
  Array test;
  std::vector<double> mean;    // per-column shift applied to every split
  std::vector<double> stddev;  // per-column scale applied to every split
  std::vector<std::size_t> permutation;  // column k holds source column permutation[k]
  std::vector<int> train_labels, validation_labels, test_labels;  // optional anomaly labels
  std::vector<std::pair<std::string, std::string>> provenance;   // ordered key/value record

  std::size_t dim() const { return train.rank() == 2 ? train.cols() : 0; }

  void note(std::string key, std::string value) { provenance.emplace_back(std::move(key), std::move(value)); }

  std::string provenance_value(const std::string& key) const {
    for (const auto& [k, v] : provenance)
      if (k == key) return v;
    return {};
  }
};

/// Fraction triple for train / validation / test.
struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

/// Uniform random permutation of 0..n-1 (Fisher-Yates).
inline std::vector<std::size_t> random_permutation(std::size_t n, RandomStream rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t k = 0; k < n; ++k) p[k] = k;
  for (std::size_t k = n; k > 1; --k) std::swap(p[k - 1], p[rng.below(k)]);
  return p;
}

inline std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& p) {
  std::vector<std::size_t> inv(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) inv[p[k]] = k;
  return inv;
}

/// Row counts for a split of n rows: train and validation are rounded,
/// test takes the remainder.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& f) {
  if (!(f.train > 0 && f.validation > 0 && f.test > 0)) throw ContractViolation("split fractions must be positive");
  if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) throw ContractViolation("split fractions must sum to 1");
  const auto tr = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto va = static_cast<std::size_t>(std::llround(f.validation * static_cast<double>(n)));
  if (tr + va >= n || tr == 0 || va == 0) {
    throw ContractViolation("split of " + std::to_string(n) + " rows leaves an empty part");
  }
  return {tr, va, n - tr - va};
}

/// Seeded row shuffle followed by contiguous slicing. Labels, when given,
/// follow their rows.
inline Dataset split(const Array& matrix, const SplitFractions& fractions, std::uint64_t seed,
                     const std::vector<int>& labels = {}) {
  if (matrix.rank() != 2) throw ContractViolation("split expects a matrix");
  if (!labels.empty() && labels.size() != matrix.rows()) throw ContractViolation("one label per row required");
  const auto sizes = split_sizes(matrix.rows(), fractions);
  const std::vector<std::size_t> order = random_permutation(matrix.rows(), RandomStream(seed).split("split"));
  auto part = [&](std::size_t begin, std::size_t count, std::vector<int>& lab) {
    std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                  order.begin() + static_cast<std::ptrdiff_t>(begin + count));
    if (!labels.empty())
      for (std::size_t r : rows) lab.push_back(labels[r]);
    return matrix.take_rows(rows);
  };
  Dataset ds;
  ds.train = part(0, sizes[0], ds.train_labels);
  ds.validation = part(sizes[0], sizes[1], ds.validation_labels);
  ds.test = part(sizes[0] + sizes[1], sizes[2], ds.test_labels);
  ds.mean.assign(matrix.cols(), 0.0);
  ds.stddev.assign(matrix.cols(), 1.0);
  ds.note("split.seed", std::to_string(seed));
  ds.note("split.sizes", std::to_string(sizes[0]) + "/" + std::to_string(sizes[1]) + "/" + std::to_string(sizes[2]));
  return ds;
}

namespace detail {

inline std::string join_numbers(const std::vector<double>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? " " : "") + format_real(v[k]);
  return s;
}

template <class T>
std::string join_ints(const std::vector<T>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? " " : "") + std::to_string(v[k]);
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

inline void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::string s;
  for (int l : labels) s += std::to_string(l) + "\n";
  write_text(path, s);
}

}  // namespace detail

/// Writes train.csv, validation.csv, test.csv (plus *_labels.csv when
/// labels exist) and the dataset.txt sidecar into `dir`.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  export_delimited(ds.train, dir / "train.csv");
  export_delimited(ds.validation, dir / "validation.csv");
  export_delimited(ds.test, dir / "test.csv");
  if (!ds.train_labels.empty()) detail::write_labels(dir / "train_labels.csv", ds.train_labels);
  if (!ds.validation_labels.empty()) detail::write_labels(dir / "validation_labels.csv", ds.validation_labels);
  if (!ds.test_labels.empty()) detail::write_labels(dir / "test_labels.csv", ds.test_labels);
  std::ostringstream side;
  side << "dim=" << ds.dim() << "\n";
  side << "rows=" << ds.train.rows() << "/" << ds.validation.rows() << "/" << ds.test.rows() << "\n";
  side << "mean=" << detail::join_numbers(ds.mean) << "\n";
  side << "stddev=" << detail::join_numbers(ds.stddev) << "\n";
  side << "permutation=" << detail::join_ints(ds.permutation) << "\n";
  for (const auto& [k, v] : ds.provenance) side << "provenance." << k << "=" << v << "\n";
  detail::write_text(dir / "dataset.txt", side.str());
}

namespace detail {

inline std::vector<int> read_labels(const std::filesystem::path& path) {
  std::vector<int> out;
  if (!std::filesystem::exists(path)) return out;
  const Array a = load_delimited(path);
  for (double v : a.data()) {
    if (v != 0.0 && v != 1.0) throw FormatError(path.string() + ": labels must be 0 or 1");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
  Dataset ds;
  ds.train = load_delimited(dir / "train.csv");
  ds.validation = load_delimited(dir / "validation.csv");
  ds.test = load_delimited(dir / "test.csv");
  if (ds.validation.cols() != ds.train.cols() || ds.test.cols() != ds.train.cols())
    throw FormatError(dir.string() + ": splits have different column counts");
  ds.train_labels = detail::read_labels(dir / "train_labels.csv");
  ds.validation_labels = detail::read_labels(dir / "validation_labels.csv");
  ds.test_labels = detail::read_labels(dir / "test_labels.csv");
  std::ifstream f(dir / "dataset.txt");
  std::string line;
  while (std::getline(f, line)) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    std::istringstream in(value);
    if (key == "mean" || key == "stddev") {
      std::vector<double>& dst = key == "mean" ? ds.mean : ds.stddev;
      std::string tok;
      while (in >> tok) dst.push_back(parse_real(tok, key));
    } else if (key == "permutation") {
      std::size_t v;
      while (in >> v) ds.permutation.push_back(v);
    } else if (key.rfind("provenance.", 0) == 0) {
      ds.note(key.substr(11), value);
    }
  }
  if (ds.mean.empty()) ds.mean.assign(ds.dim(), 0.0);
  if (ds.stddev.empty()) ds.stddev.assign(ds.dim(), 1.0);
  return ds;
}

}  // namespace tanflow

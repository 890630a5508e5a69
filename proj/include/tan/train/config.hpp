#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>

#include "tan/errors.hpp"

namespace tanflow {

/// Optimization settings for one training run.
struct TrainConfig {
  std::size_t iterations = 30000;
  std::size_t batch_size = 256;
  double learning_rate = 0.005;
  double decay = 0.5;
  std::size_t decay_period = 5000;
  double clip_norm = 1.0;
  std::size_t validation_period = 500;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;
  std::size_t workers = 1;  // threads for validation passes

  void validate() const {
    if (iterations == 0) throw ContractViolation("iterations must be positive");
    if (batch_size == 0) throw ContractViolation("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ContractViolation("learning rate must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw ContractViolation("decay factor must lie in (0, 1]");
    if (decay_period == 0) throw ContractViolation("decay period must be positive");
    if (!(clip_norm > 0.0)) throw ContractViolation("clip norm must be positive");
    if (validation_period == 0) throw ContractViolation("validation period must be positive");
    if (workers == 0) throw ContractViolation("workers must be positive");
  }
};

/// Profile for large datasets: batches of 1024 and 60000 iterations.
inline TrainConfig large_data_profile() {
  TrainConfig c;
  c.batch_size = 1024;
  c.iterations = 60000;
  return c;
}

namespace detail {

inline std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ParseError("bad value for " + key + ": \"" + text + "\"");
  return v;
}

}  // namespace detail

/// key=value lines; reals are written in shortest round-trip form.
inline std::string to_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "iterations=" << c.iterations << "\n"
      << "batch_size=" << c.batch_size << "\n"
      << "learning_rate=" << detail::shortest(c.learning_rate) << "\n"
      << "decay=" << detail::shortest(c.decay) << "\n"
      << "decay_period=" << c.decay_period << "\n"
      << "clip_norm=" << detail::shortest(c.clip_norm) << "\n"
      << "validation_period=" << c.validation_period << "\n"
      << "seed=" << c.seed << "\n"
      << "checkpoint_dir=" << c.checkpoint_dir << "\n"
      << "workers=" << c.workers << "\n";
  return out.str();
}

/// Applies one key=value assignment.
inline void set_field(TrainConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "iterations") c.iterations = parse_number<std::size_t>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
  else if (key == "decay") c.decay = parse_number<double>(key, value);
  else if (key == "decay_period") c.decay_period = parse_number<std::size_t>(key, value);
  else if (key == "clip_norm") c.clip_norm = parse_number<double>(key, value);
  else if (key == "validation_period") c.validation_period = parse_number<std::size_t>(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "checkpoint_dir") c.checkpoint_dir = value;
  else if (key == "workers") c.workers = parse_number<std::size_t>(key, value);
  else throw ParseError("unknown training option \"" + key + "\"");
}

/// Parses key=value lines on top of `base`. Blank lines and '#' comments
/// are ignored.
inline TrainConfig train_config_from_text(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("line " + std::to_string(number) + ": expected key=value");
    set_field(base, line.substr(0, eq), line.substr(eq + 1));
  }
  return base;
}

}  // namespace tanflow

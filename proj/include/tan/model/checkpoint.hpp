#pragma once

// Checkpoint file layout:
//
//   tan-checkpoint <version>
//   <key>=<value>                 one line per config / metadata field
//   tensors <count>
//   <name> <rank> <dims...> <offset> <count>
//   payload <bytes>
//   <binary: little-endian IEEE-754 doubles, row-major>
//
// Real-valued header fields are written as hexadecimal floats.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tan/model/tan_model.hpp"

namespace tanflow {

inline constexpr int kCheckpointVersion = 1;

/// Training state stored alongside the parameters.
struct CheckpointMeta {
  std::uint64_t iteration = 0;
  double validation_nll = 0.0;
  std::uint64_t train_seed = 0;
};

namespace detail {

inline std::string hex_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

inline double parse_hex_double(const std::string& s, const std::string& key) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  bool negative = false;
  if (b != e && *b == '-') negative = true, ++b;
  const auto res = std::from_chars(b, e, v, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != e) throw FormatError("checkpoint: bad real value for " + key + ": " + s);
  return negative ? -v : v;
}

inline std::uint64_t parse_uint(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    throw FormatError("checkpoint: bad integer for " + what + ": \"" + s + "\"");
  return v;
}

}  // namespace detail

inline std::map<std::string, std::string> config_fields(const ModelConfig& c) {
  using detail::hex_double;
  return {{"preset", c.preset},
          {"conditional", c.conditional},
          {"dim", std::to_string(c.dim)},
          {"seed", std::to_string(c.seed)},
          {"transform.leak", hex_double(c.transform.leak)},
          {"transform.rnn_hidden", std::to_string(c.transform.rnn_hidden)},
          {"transform.coupling_hidden", std::to_string(c.transform.coupling_hidden)},
          {"transform.shift_hidden", std::to_string(c.transform.shift_hidden)},
          {"transform.shift_state", std::to_string(c.transform.shift_state)},
          {"transform.net_leak", hex_double(c.transform.net_leak)},
          {"transform.init_noise", hex_double(c.transform.init_noise)},
          {"cond.hidden", std::to_string(c.cond.hidden)},
          {"cond.head_hidden", std::to_string(c.cond.head_hidden)},
          {"cond.components", std::to_string(c.cond.components)},
          {"cond.ram_units", std::to_string(c.cond.ram_units)},
          {"cond.head_leak", hex_double(c.cond.head_leak)}};
}

inline ModelConfig config_from_fields(const std::map<std::string, std::string>& f) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = f.find(key);
    if (it == f.end()) throw FormatError("checkpoint: missing field " + key);
    return it->second;
  };
  using detail::parse_hex_double;
  using detail::parse_uint;
  ModelConfig c;
  c.preset = get("preset");
  c.conditional = get("conditional");
  c.dim = parse_uint(get("dim"), "dim");
  c.seed = parse_uint(get("seed"), "seed");
  c.transform.leak = parse_hex_double(get("transform.leak"), "transform.leak");
  c.transform.rnn_hidden = parse_uint(get("transform.rnn_hidden"), "transform.rnn_hidden");
  c.transform.coupling_hidden = parse_uint(get("transform.coupling_hidden"), "transform.coupling_hidden");
  c.transform.shift_hidden = parse_uint(get("transform.shift_hidden"), "transform.shift_hidden");
  c.transform.shift_state = parse_uint(get("transform.shift_state"), "transform.shift_state");
  c.transform.net_leak = parse_hex_double(get("transform.net_leak"), "transform.net_leak");
  c.transform.init_noise = parse_hex_double(get("transform.init_noise"), "transform.init_noise");
  c.cond.hidden = parse_uint(get("cond.hidden"), "cond.hidden");
  c.cond.head_hidden = parse_uint(get("cond.head_hidden"), "cond.head_hidden");
  c.cond.components = parse_uint(get("cond.components"), "cond.components");
  c.cond.ram_units = parse_uint(get("cond.ram_units"), "cond.ram_units");
  c.cond.head_leak = parse_hex_double(get("cond.head_leak"), "cond.head_leak");
  return c;
}

/// Serializes the model to bytes (see the layout above).
inline std::string checkpoint_bytes(TanModel& model, const CheckpointMeta& meta = {}) {
  std::ostringstream head;
  head << "tan-checkpoint " << kCheckpointVersion << "\n";
  for (const auto& [k, v] : config_fields(model.config())) head << k << "=" << v << "\n";
  head << "meta.iteration=" << meta.iteration << "\n";
  head << "meta.validation_nll=" << detail::hex_double(meta.validation_nll) << "\n";
  head << "meta.train_seed=" << meta.train_seed << "\n";
  const std::vector<Parameter*> params = model.parameters();
  head << "tensors " << params.size() << "\n";
  std::size_t offset = 0;
  for (const Parameter* p : params) {
    head << p->name << " " << p->value.rank();
    for (std::size_t s : p->value.shape()) head << " " << s;
    head << " " << offset << " " << p->value.size() << "\n";
    offset += p->value.size();
  }
  head << "payload " << offset * 8 << "\n";
  std::string out = head.str();
  out.reserve(out.size() + offset * 8);
  for (const Parameter* p : params) {
    for (double v : p->value.data()) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  return out;
}

/// Writes atomically: a temporary sibling file is renamed into place.
inline void save_checkpoint(TanModel& model, const std::filesystem::path& path, const CheckpointMeta& meta = {}) {
  const std::string bytes = checkpoint_bytes(model, meta);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct LoadedCheckpoint {
  TanModel model;
  CheckpointMeta meta;
};

/// Parses checkpoint bytes. The model is returned only when every tensor
/// was read and matched its expected shape.
inline LoadedCheckpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  std::size_t pos = 0;
  auto line = [&]() -> std::string {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError(origin + ": truncated header");
    std::string s = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return s;
  };
  const std::string magic = line();
  const std::string prefix = "tan-checkpoint ";
  if (magic.rfind(prefix, 0) != 0) throw FormatError(origin + ": not a checkpoint file");
  const std::uint64_t version = detail::parse_uint(magic.substr(prefix.size()), "version");
  if (version != kCheckpointVersion) {
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  std::map<std::string, std::string> fields;
  std::string l;
  while ((l = line()).rfind("tensors ", 0) != 0) {
    const std::size_t eq = l.find('=');
    if (eq == std::string::npos) throw FormatError(origin + ": malformed header line \"" + l + "\"");
    fields[l.substr(0, eq)] = l.substr(eq + 1);
  }
  const std::size_t count = detail::parse_uint(l.substr(8), "tensor count");
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, size;
  };
  std::vector<Entry> entries;
  for (std::size_t k = 0; k < count; ++k) {
    std::istringstream in(line());
    Entry e;
    std::size_t rank = 0;
    if (!(in >> e.name >> rank)) throw FormatError(origin + ": malformed tensor entry " + std::to_string(k));
    e.shape.resize(rank);
    for (std::size_t& s : e.shape) in >> s;
    if (!(in >> e.offset >> e.size) || e.size != shape_size(e.shape))
      throw FormatError(origin + ": malformed tensor entry for " + e.name);
    entries.push_back(std::move(e));
  }
  const std::string payload = line();
  if (payload.rfind("payload ", 0) != 0) throw FormatError(origin + ": missing payload marker");
  const std::size_t payload_bytes = detail::parse_uint(payload.substr(8), "payload size");
  if (bytes.size() - pos != payload_bytes) {
    throw FormatError(origin + ": payload holds " + std::to_string(bytes.size() - pos) + " bytes, header declares " +
                      std::to_string(payload_bytes) + " (truncated or corrupted)");
  }

  ModelConfig config = config_from_fields(fields);
  CheckpointMeta meta;
  meta.iteration = detail::parse_uint(fields.count("meta.iteration") ? fields["meta.iteration"] : "0", "iteration");
  if (fields.count("meta.validation_nll"))
    meta.validation_nll = detail::parse_hex_double(fields["meta.validation_nll"], "validation_nll");
  if (fields.count("meta.train_seed")) meta.train_seed = detail::parse_uint(fields["meta.train_seed"], "train_seed");

  TanModel model(config);
  std::vector<Parameter*> params = model.parameters();
  if (params.size() != entries.size()) {
    throw FormatError(origin + ": " + std::to_string(entries.size()) + " tensors stored, architecture has " +
                      std::to_string(params.size()));
  }
  std::vector<Array> values;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Entry& e = entries[k];
    if (e.name != params[k]->name) {
      throw FormatError(origin + ": tensor " + std::to_string(k) + " is " + e.name + ", expected " + params[k]->name);
    }
    if (e.shape != params[k]->value.shape()) {
      throw FormatError(origin + ": shape mismatch for " + e.name + ": stored " + shape_string(e.shape) +
                        ", expected " + shape_string(params[k]->value.shape()));
    }
    if ((e.offset + e.size) * 8 > payload_bytes) throw FormatError(origin + ": tensor " + e.name + " exceeds payload");
    Array a(e.shape);
    for (std::size_t i = 0; i < e.size; ++i) {
      std::uint64_t bits = 0;
      const std::size_t at = pos + (e.offset + i) * 8;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + b])) << (8 * b);
      a[i] = std::bit_cast<double>(bits);
    }
    values.push_back(std::move(a));
  }
  model.restore(values);
  return {std::move(model), meta};
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str(), path.string());
}

}  // namespace tanflow

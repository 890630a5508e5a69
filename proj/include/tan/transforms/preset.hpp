#pragma once

// Preset names for transformation stacks, e.g. "L RNN+4xAdd+Re".
//
//   preset := "None" | "L " body | N "x " body | body
//   body   := term ("+" term)*
//   term   := [N "x"] atom
//   atom   := "L" | "RNN" | "SRNN" | "Add" | "Re" | "ReLU" | "None"
//
// "NxRNN", "NxSRNN" and "NxAdd" expand to N stages with reversals between
// consecutive ones. "N x body" repeats the whole body N times.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "tan/diffcore/rng.hpp"
#include "tan/transforms/chain.hpp"
#include "tan/transforms/coupling.hpp"
#include "tan/transforms/linear_lu.hpp"
#include "tan/transforms/recurrent.hpp"
#include "tan/transforms/shift.hpp"
#include "tan/transforms/simple.hpp"

namespace tanflow {

enum class StageKind { Linear, Recurrent, Shift, Coupling, Reversal, Rescale, Leaky };

inline std::string_view stage_kind_name(StageKind kind) {
  switch (kind) {
    case StageKind::Linear: return "LinearLU";
    case StageKind::Recurrent: return "Recurrent";
    case StageKind::Shift: return "RecurrentShift";
    case StageKind::Coupling: return "AdditiveCoupling";
    case StageKind::Reversal: return "Reversal";
    case StageKind::Rescale: return "Rescale";
    case StageKind::Leaky: return "ElementwiseLeaky";
  }
  return "?";
}

/// Named transformation stacks used by the grid experiments.
inline const std::vector<std::string>& table_presets() {
  static const std::vector<std::string> names = {
      "None",         "L None",         "RNN",           "L RNN",           "2xRNN",
      "L 2xRNN",      "4xAdd+Re",       "L 4xAdd+Re",    "4xSRNN+Re",       "L 4xSRNN+Re",
      "RNN+4xAdd+Re", "L RNN+4xAdd+Re", "RNN+4xSRNN+Re", "L RNN+4xSRNN+Re", "5x L+ReLU+SRNN+Re"};
  return names;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Parses a leading "<digits>x"; returns 1 when absent.
inline std::size_t take_count(std::string_view& s, std::string_view preset) {
  std::size_t digits = 0;
  while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
  if (digits == 0 || digits >= s.size() || s[digits] != 'x') return 1;
  std::size_t count = 0;
  std::from_chars(s.data(), s.data() + digits, count);
  if (count == 0) throw ParseError("zero repetition count in preset \"" + std::string(preset) + "\"");
  s.remove_prefix(digits + 1);
  return count;
}

inline void append_term(std::vector<StageKind>& out, std::string_view term, std::string_view preset) {
  const std::string_view original = term;
  const std::size_t count = take_count(term, preset);
  term = trim(term);
  StageKind kind;
  bool directional = false;
  if (term == "L") {
    kind = StageKind::Linear;
  } else if (term == "RNN") {
    kind = StageKind::Recurrent, directional = true;
  } else if (term == "SRNN") {
    kind = StageKind::Shift, directional = true;
  } else if (term == "Add") {
    kind = StageKind::Coupling, directional = true;
  } else if (term == "Re") {
    kind = StageKind::Rescale;
  } else if (term == "ReLU") {
    kind = StageKind::Leaky;
  } else {
    throw ParseError("unknown transformation atom \"" + std::string(term) + "\" (term \"" +
                     std::string(original) + "\") in preset \"" + std::string(preset) + "\"");
  }
  for (std::size_t k = 0; k < count; ++k) {
    if (k > 0 && directional) out.push_back(StageKind::Reversal);
    out.push_back(kind);
  }
}

inline std::vector<StageKind> parse_body(std::string_view body, std::string_view preset) {
  body = trim(body);
  if (body == "None") return {};
  if (body.empty()) throw ParseError("empty transformation list in preset \"" + std::string(preset) + "\"");
  std::vector<StageKind> out;
  while (true) {
    const std::size_t plus = body.find('+');
    const std::string_view term = trim(body.substr(0, plus));
    if (term.empty()) throw ParseError("empty term in preset \"" + std::string(preset) + "\"");
    if (term == "None") throw ParseError("\"None\" cannot be combined in preset \"" + std::string(preset) + "\"");
    append_term(out, term, preset);
    if (plus == std::string_view::npos) break;
    body.remove_prefix(plus + 1);
  }
  return out;
}

}  // namespace detail

/// Expands a preset name into its stage sequence.
inline std::vector<StageKind> parse_preset(std::string_view name) {
  const std::string_view preset = detail::trim(name);
  std::string_view rest = preset;
  // Whole-body repetition "5x L+ReLU+SRNN+Re": count followed by 'x' and a space.
  std::size_t digits = 0;
  while (digits < rest.size() && std::isdigit(static_cast<unsigned char>(rest[digits]))) ++digits;
  if (digits > 0 && digits + 1 < rest.size() && rest[digits] == 'x' &&
      std::isspace(static_cast<unsigned char>(rest[digits + 1]))) {
    const std::size_t count = detail::take_count(rest, preset);
    const std::vector<StageKind> body = detail::parse_body(rest, preset);
    if (body.empty()) throw ParseError("repeated empty body in preset \"" + std::string(preset) + "\"");
    std::vector<StageKind> out;
    for (std::size_t k = 0; k < count; ++k) out.insert(out.end(), body.begin(), body.end());
    return out;
  }
  if (rest.size() >= 2 && rest[0] == 'L' && std::isspace(static_cast<unsigned char>(rest[1]))) {
    std::vector<StageKind> out{StageKind::Linear};
    const std::vector<StageKind> body = detail::parse_body(rest.substr(2), preset);
    out.insert(out.end(), body.begin(), body.end());
    return out;
  }
  return detail::parse_body(rest, preset);
}

/// Builds a freshly initialized chain for a stage sequence. Stage k draws
/// its initialization from rng.split(k) and is named "t<k>.<kind>".
inline TransformChain build_chain(const std::vector<StageKind>& stages, std::size_t dim,
                                  const TransformOptions& opt, const RandomStream& rng) {
  TransformChain chain(dim);
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const std::string name = "t" + std::to_string(k) + "." + std::string(stage_kind_name(stages[k]));
    RandomStream sub = rng.split(k);
    switch (stages[k]) {
      case StageKind::Linear:
        chain.append(std::make_unique<LinearLU>(name, dim, sub, opt.init_noise));
        break;
      case StageKind::Recurrent:
        chain.append(std::make_unique<RecurrentTransform>(name, dim, opt.rnn_hidden, opt.leak, sub,
                                                          opt.init_noise));
        break;
      case StageKind::Shift:
        chain.append(std::make_unique<RecurrentShift>(name, dim, opt.shift_state, opt.shift_hidden,
                                                      opt.net_leak, sub));
        break;
      case StageKind::Coupling:
        chain.append(std::make_unique<AdditiveCoupling>(name, dim, opt.coupling_hidden, opt.net_leak, sub));
        break;
      case StageKind::Reversal:
        chain.append(std::make_unique<Reversal>(name, dim));
        break;
      case StageKind::Rescale:
        chain.append(std::make_unique<Rescale>(name, dim));
        break;
      case StageKind::Leaky:
        chain.append(std::make_unique<ElementwiseLeaky>(name, dim, opt.leak));
        break;
    }
  }
  return chain;
}

inline TransformChain build_chain(std::string_view preset, std::size_t dim, const TransformOptions& opt,
                                  const RandomStream& rng) {
  return build_chain(parse_preset(preset), dim, opt, rng);
}

}  // namespace tanflow

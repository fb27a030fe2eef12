// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "faceguard/common.hpp"

namespace faceguard {

// Layer spec grammar, comma-separated:
//   c7s1-k : 7x7 conv, k filters, stride 1
//   dk     : 4x4 conv, k filters, stride 2
//   Rk     : residual block of two 3x3 convs with k channels
//   uk     : 2x nearest upsample followed by 5x5 conv, k filters, stride 1
//   fcN    : fully-connected layer with N outputs
struct LayerSpec {
  enum class Kind { Conv7, Down, Residual, Up, Fc };
  Kind kind;
  std::size_t width;
};

using NetSpec = std::vector<LayerSpec>;

inline NetSpec parse_net_spec(const std::string& text) {
  NetSpec spec;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    std::string tok = text.substr(pos, comma - pos);
    // trim
    while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.erase(tok.begin());
    while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t')) tok.pop_back();
    if (tok.empty()) throw ValidationError("empty token in network spec: '" + text + "'");

    auto number = [&](std::size_t offset) -> std::size_t {
      if (offset >= tok.size()) throw ValidationError("missing width in token '" + tok + "'");
      std::size_t value = 0;
      for (std::size_t i = offset; i < tok.size(); ++i) {
        if (tok[i] < '0' || tok[i] > '9') {
          throw ValidationError("bad width in token '" + tok + "'");
        }
        value = value * 10 + static_cast<std::size_t>(tok[i] - '0');
      }
      if (value == 0) throw ValidationError("zero width in token '" + tok + "'");
      return value;
    };

    if (tok.rfind("c7s1-", 0) == 0) {
      spec.push_back({LayerSpec::Kind::Conv7, number(5)});
    } else if (tok.rfind("fc", 0) == 0) {
      spec.push_back({LayerSpec::Kind::Fc, number(2)});
    } else if (tok[0] == 'd') {
      spec.push_back({LayerSpec::Kind::Down, number(1)});
    } else if (tok[0] == 'R') {
      spec.push_back({LayerSpec::Kind::Residual, number(1)});
    } else if (tok[0] == 'u') {
      spec.push_back({LayerSpec::Kind::Up, number(1)});
    } else {
      throw ValidationError("unknown token '" + tok + "' in network spec");
    }
    pos = comma + 1;
    if (comma == text.size()) break;
  }
  if (spec.empty()) throw ValidationError("empty network spec");
  return spec;
}

inline std::string net_spec_to_string(const NetSpec& spec) {
  std::string out;
  for (const auto& l : spec) {
    if (!out.empty()) out += ',';
    switch (l.kind) {
      case LayerSpec::Kind::Conv7: out += "c7s1-" + std::to_string(l.width); break;
      case LayerSpec::Kind::Down: out += "d" + std::to_string(l.width); break;
      case LayerSpec::Kind::Residual: out += "R" + std::to_string(l.width); break;
      case LayerSpec::Kind::Up: out += "u" + std::to_string(l.width); break;
      case LayerSpec::Kind::Fc: out += "fc" + std::to_string(l.width); break;
    }
  }
  return out;
}

}  // namespace faceguard

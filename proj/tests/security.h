#pragma once

// Single-field envelope mutations for the security fuzz.

#include <random>
#include <string>

#include "fleet/identity.h"

namespace fleet::testing {

struct Mutation {
  Envelope envelope;
  std::string field;
};

inline Mutation mutate_one_field(const Envelope& original, std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto flip = [&](Bytes& b) {
    switch (pick(0, 3)) {
      case 0:
        if (!b.empty()) {
          b[pick(0, b.size() - 1)] ^= static_cast<std::uint8_t>(1u << pick(0, 7));
          return;
        }
        [[fallthrough]];
      case 1: b.push_back(static_cast<std::uint8_t>(pick(0, 255))); return;
      case 2:
        if (!b.empty()) {
          b.erase(b.begin() + static_cast<long>(pick(0, b.size() - 1)));
          return;
        }
        b.push_back(0);
        return;
      default: b.assign(b.size(), static_cast<std::uint8_t>(pick(0, 255))); b.push_back(1); return;
    }
  };

  Mutation m{original, {}};
  switch (pick(0, 4)) {
    case 0: {
      m.field = "sender";
      std::string& s = m.envelope.sender;
      const std::size_t i = pick(0, s.size() - 1);
      s[i] = s[i] == '0' ? '1' : '0';
      break;
    }
    case 1:
      m.field = "nonce";
      flip(m.envelope.nonce);
      break;
    case 2: {
      m.field = "timestamp";
      const std::int64_t delta = static_cast<std::int64_t>(pick(1, 1000));
      m.envelope.timestamp += pick(0, 1) ? delta : -delta;
      break;
    }
    case 3:
      m.field = "payload";
      flip(m.envelope.payload);
      break;
    default:
      m.field = "signature";
      flip(m.envelope.signature);
      break;
  }
  return m;
}

}  // namespace fleet::testing

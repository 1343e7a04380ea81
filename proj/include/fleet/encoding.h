#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fleet {

using Bytes = std::vector<std::uint8_t>;

Bytes to_bytes(std::string_view s);
std::string to_string(std::span<const std::uint8_t> b);

std::string hex_encode(std::span<const std::uint8_t> b);

// Standard alphabet, with padding. Throws MalformedDocument on bad input.
std::string base64_encode(std::span<const std::uint8_t> b);
Bytes base64_decode(std::string_view s);

// 128 random bits as 32 lowercase hex chars.
std::string new_id();

bool is_hex_id(std::string_view s, std::size_t length = 32);

}  // namespace fleet

#include "fleet/encoding.h"

#include <sodium.h>

#include "fleet/error.h"

namespace fleet {

Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

std::string to_string(std::span<const std::uint8_t> b) {
  return std::string(b.begin(), b.end());
}

std::string hex_encode(std::span<const std::uint8_t> b) {
  std::string out(b.size() * 2 + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), b.data(), b.size());
  out.pop_back();
  return out;
}

std::string base64_encode(std::span<const std::uint8_t> b) {
  const std::size_t len =
      sodium_base64_ENCODED_LEN(b.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(len, '\0');
  sodium_bin2base64(out.data(), out.size(), b.data(), b.size(),
                    sodium_base64_VARIANT_ORIGINAL);
  out.resize(len - 1);
  return out;
}

Bytes base64_decode(std::string_view s) {
  Bytes out(s.size() / 4 * 3 + 3);
  std::size_t written = 0;
  const char* end = nullptr;
  if (sodium_base642bin(out.data(), out.size(), s.data(), s.size(), nullptr,
                        &written, &end, sodium_base64_VARIANT_ORIGINAL) != 0 ||
      end != s.data() + s.size()) {
    throw Error(ErrorCode::MalformedDocument, "invalid base64");
  }
  out.resize(written);
  return out;
}

std::string new_id() {
  if (sodium_init() < 0) throw Error(ErrorCode::Internal, "sodium_init failed");
  std::uint8_t raw[16];
  randombytes_buf(raw, sizeof raw);
  return hex_encode(raw);
}

bool is_hex_id(std::string_view s, std::size_t length) {
  if (s.size() != length) return false;
  for (char c : s) {
    const bool digit = c >= '0' && c <= '9';
    const bool lower = c >= 'a' && c <= 'f';
    if (!digit && !lower) return false;
  }
  return true;
}

}  // namespace fleet

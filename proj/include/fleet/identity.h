#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "fleet/encoding.h"
#include "fleet/json.h"
#include "fleet/model.h"

namespace fleet {

using Key32 = std::array<std::uint8_t, 32>;

struct PublicKeys {
  Key32 sign{};   // Ed25519
  Key32 agree{};  // X25519

  // Lowercase hex SHA-256 of sign || agree.
  Fingerprint fingerprint() const;
  friend bool operator==(const PublicKeys&, const PublicKeys&) = default;
};

void to_json(Json& j, const PublicKeys& k);
void from_json(const Json& j, PublicKeys& k);

class Identity {
 public:
  // Seeded generation is deterministic and meant for tests and harnesses.
  static Identity generate(std::optional<std::uint64_t> seed = std::nullopt);

  // Reads the key file, or creates it with a fresh identity.
  static Identity load_or_create(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const PublicKeys& public_keys() const { return public_; }
  const Fingerprint& fingerprint() const { return fingerprint_; }

  Bytes sign(std::span<const std::uint8_t> message) const;
  Key32 agree(const Key32& peer_public) const;

 private:
  Identity() = default;
  static Identity from_secrets(const Key32& sign_seed, const Key32& agree_secret);

  std::array<std::uint8_t, 64> sign_secret_{};
  Key32 sign_seed_{};
  Key32 agree_secret_{};
  PublicKeys public_;
  Fingerprint fingerprint_;
};

struct Envelope {
  Fingerprint sender;
  Bytes nonce;  // 16 bytes
  std::int64_t timestamp = 0;
  Bytes payload;  // ephemeral X25519 public key || AEAD ciphertext
  Bytes signature;
  friend bool operator==(const Envelope&, const Envelope&) = default;
};

void to_json(Json& j, const Envelope& e);
void from_json(const Json& j, Envelope& e);
std::string encode_envelope(const Envelope& e);
Envelope decode_envelope(std::string_view text);  // MalformedDocument

std::int64_t unix_now();

inline constexpr std::int64_t kMaxClockSkewSeconds = 300;
inline constexpr std::int64_t kReplayRetentionSeconds = 600;

/// (sender, nonce) pairs seen recently. Check-and-insert is atomic.
class ReplayCache {
 public:
  // False if the pair was already present.
  bool check_and_insert(const Fingerprint& sender, const Bytes& nonce, std::int64_t now);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::pair<Fingerprint, Bytes>, std::int64_t> seen_;
  std::int64_t last_purge_ = 0;
};

Envelope seal(const Identity& sender, const PublicKeys& recipient,
              std::span<const std::uint8_t> plaintext, std::int64_t now);

using KeyLookup = std::function<std::optional<PublicKeys>(const Fingerprint&)>;

struct Opened {
  Bytes plaintext;
  Fingerprint sender;
};

// Rejects, in this order and before any decryption: UnknownSender,
// SignatureInvalid, StaleTimestamp, ReplayDetected. Then DecryptFailed.
Opened open(const Identity& recipient, const KeyLookup& known_senders,
            const Envelope& envelope, std::int64_t now, ReplayCache& replay);

// First-contact variant for join and connect, where the sender's keys travel
// inside the payload. The enclosed keys must hash to the claimed sender and
// verify the signature; `extract_keys` throws on a malformed payload.
Opened open_bootstrap(const Identity& recipient, const Envelope& envelope,
                      std::int64_t now, ReplayCache& replay,
                      const std::function<PublicKeys(const Bytes&)>& extract_keys);

}  // namespace fleet

#include "fleet/identity.h"

#include <sodium.h>

#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fleet {
namespace {

constexpr std::string_view kHkdfInfo = "fleet-envelope-v1";
constexpr std::size_t kNonceBytes = 16;

void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw Error(ErrorCode::Internal, "sodium_init failed");
}

Key32 sha256(std::span<const std::uint8_t> data) {
  Key32 out;
  crypto_hash_sha256(out.data(), data.data(), data.size());
  return out;
}

Key32 hmac_sha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> msg) {
  crypto_auth_hmacsha256_state st;
  crypto_auth_hmacsha256_init(&st, key.data(), key.size());
  crypto_auth_hmacsha256_update(&st, msg.data(), msg.size());
  Key32 out;
  crypto_auth_hmacsha256_final(&st, out.data());
  return out;
}

// HKDF-SHA-256 (RFC 5869) for a single 32-byte output block.
Key32 hkdf_sha256(std::span<const std::uint8_t> salt, std::span<const std::uint8_t> ikm,
                  std::span<const std::uint8_t> info) {
  const Key32 prk = hmac_sha256(salt, ikm);
  Bytes t(info.begin(), info.end());
  t.push_back(0x01);
  return hmac_sha256(prk, t);
}

Bytes signed_message(const Fingerprint& sender, const Bytes& nonce, std::int64_t timestamp,
                     const Bytes& payload) {
  Bytes m = to_bytes(sender);
  m.insert(m.end(), nonce.begin(), nonce.end());
  const std::string ts = std::to_string(timestamp);
  m.insert(m.end(), ts.begin(), ts.end());
  m.insert(m.end(), payload.begin(), payload.end());
  return m;
}

Bytes associated_data(const Fingerprint& sender, std::int64_t timestamp) {
  Bytes ad = to_bytes(sender);
  const std::string ts = std::to_string(timestamp);
  ad.insert(ad.end(), ts.begin(), ts.end());
  return ad;
}

Key32 derive_key(const Key32& shared, const Bytes& nonce, const Key32& eph_public,
                 const Key32& recipient_agree) {
  Bytes info = to_bytes(kHkdfInfo);
  info.insert(info.end(), eph_public.begin(), eph_public.end());
  info.insert(info.end(), recipient_agree.begin(), recipient_agree.end());
  return hkdf_sha256(nonce, shared, info);
}

Key32 key_from_b64(const std::string& s) {
  Bytes b = base64_decode(s);
  if (b.size() != 32) throw Error(ErrorCode::MalformedDocument, "public key must be 32 bytes");
  Key32 k;
  std::memcpy(k.data(), b.data(), 32);
  return k;
}

bool verify(const PublicKeys& keys, const Envelope& e) {
  if (e.signature.size() != crypto_sign_BYTES || e.nonce.size() != kNonceBytes) return false;
  const Bytes msg = signed_message(e.sender, e.nonce, e.timestamp, e.payload);
  return crypto_sign_verify_detached(e.signature.data(), msg.data(), msg.size(),
                                     keys.sign.data()) == 0;
}

Bytes decrypt(const Identity& recipient, const Envelope& e) {
  constexpr std::size_t header = crypto_scalarmult_BYTES;
  if (e.payload.size() < header + crypto_aead_chacha20poly1305_ietf_ABYTES) {
    throw Error(ErrorCode::DecryptFailed, "payload too short");
  }
  Key32 eph;
  std::memcpy(eph.data(), e.payload.data(), header);
  const Key32 shared = recipient.agree(eph);
  const Key32 key = derive_key(shared, e.nonce, eph, recipient.public_keys().agree);
  const Bytes ad = associated_data(e.sender, e.timestamp);
  const std::uint8_t npub[crypto_aead_chacha20poly1305_ietf_NPUBBYTES] = {};
  Bytes out(e.payload.size() - header);
  unsigned long long len = 0;
  if (crypto_aead_chacha20poly1305_ietf_decrypt(
          out.data(), &len, nullptr, e.payload.data() + header, e.payload.size() - header,
          ad.data(), ad.size(), npub, key.data()) != 0) {
    throw Error(ErrorCode::DecryptFailed, "authentication failed");
  }
  out.resize(len);
  return out;
}

void check_fresh(const Envelope& e, std::int64_t now, ReplayCache& replay) {
  const std::int64_t skew = now > e.timestamp ? now - e.timestamp : e.timestamp - now;
  if (skew > kMaxClockSkewSeconds) {
    throw Error(ErrorCode::StaleTimestamp, "timestamp outside the accepted window");
  }
  if (!replay.check_and_insert(e.sender, e.nonce, now)) {
    throw Error(ErrorCode::ReplayDetected, "nonce already seen for sender");
  }
}

}  // namespace

Fingerprint PublicKeys::fingerprint() const {
  Bytes concat(sign.begin(), sign.end());
  concat.insert(concat.end(), agree.begin(), agree.end());
  return hex_encode(sha256(concat));
}

void to_json(Json& j, const PublicKeys& k) {
  j = Json{{"agree", base64_encode(k.agree)}, {"sign", base64_encode(k.sign)}};
}

void from_json(const Json& j, PublicKeys& k) {
  k.sign = key_from_b64(require_as<std::string>(j, "sign"));
  k.agree = key_from_b64(require_as<std::string>(j, "agree"));
}

Identity Identity::from_secrets(const Key32& sign_seed, const Key32& agree_secret) {
  ensure_sodium();
  Identity id;
  id.sign_seed_ = sign_seed;
  id.agree_secret_ = agree_secret;
  crypto_sign_seed_keypair(id.public_.sign.data(), id.sign_secret_.data(), sign_seed.data());
  crypto_scalarmult_base(id.public_.agree.data(), agree_secret.data());
  id.fingerprint_ = id.public_.fingerprint();
  return id;
}

Identity Identity::generate(std::optional<std::uint64_t> seed) {
  ensure_sodium();
  Key32 sign_seed;
  Key32 agree_secret;
  if (seed) {
    auto derive = [&](std::string_view label) {
      Bytes material = to_bytes(label);
      for (int i = 0; i < 8; ++i) material.push_back(static_cast<std::uint8_t>(*seed >> (8 * i)));
      return sha256(material);
    };
    sign_seed = derive("fleet-identity-sign");
    agree_secret = derive("fleet-identity-agree");
  } else {
    randombytes_buf(sign_seed.data(), sign_seed.size());
    randombytes_buf(agree_secret.data(), agree_secret.size());
  }
  return from_secrets(sign_seed, agree_secret);
}

Identity Identity::load_or_create(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    Identity id = generate();
    id.save(path);
    return id;
  }
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) {
    text.pop_back();
  }
  Bytes secret = base64_decode(text);
  if (secret.size() != 64) {
    throw Error(ErrorCode::ConfigInvalid, "key file " + path.string() + " is malformed");
  }
  Key32 sign_seed;
  Key32 agree_secret;
  std::memcpy(sign_seed.data(), secret.data(), 32);
  std::memcpy(agree_secret.data(), secret.data() + 32, 32);
  return from_secrets(sign_seed, agree_secret);
}

void Identity::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  Bytes secret(sign_seed_.begin(), sign_seed_.end());
  secret.insert(secret.end(), agree_secret_.begin(), agree_secret_.end());
  std::ofstream out(path, std::ios::trunc);
  out << base64_encode(secret) << '\n';
  if (!out) throw Error(ErrorCode::ConfigInvalid, "cannot write key file " + path.string());
  std::filesystem::permissions(path, std::filesystem::perms::owner_read |
                                         std::filesystem::perms::owner_write);
}

Bytes Identity::sign(std::span<const std::uint8_t> message) const {
  Bytes sig(crypto_sign_BYTES);
  crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(),
                       sign_secret_.data());
  return sig;
}

Key32 Identity::agree(const Key32& peer_public) const {
  Key32 shared;
  if (crypto_scalarmult(shared.data(), agree_secret_.data(), peer_public.data()) != 0) {
    throw Error(ErrorCode::DecryptFailed, "invalid key agreement input");
  }
  return shared;
}

void to_json(Json& j, const Envelope& e) {
  j = Json{{"nonce", base64_encode(e.nonce)},
           {"payload", base64_encode(e.payload)},
           {"sender", e.sender},
           {"signature", base64_encode(e.signature)},
           {"timestamp", e.timestamp}};
}

void from_json(const Json& j, Envelope& e) {
  e.sender = require_as<std::string>(j, "sender");
  e.nonce = base64_decode(require_as<std::string>(j, "nonce"));
  e.timestamp = require_as<std::int64_t>(j, "timestamp");
  e.payload = base64_decode(require_as<std::string>(j, "payload"));
  e.signature = base64_decode(require_as<std::string>(j, "signature"));
}

std::string encode_envelope(const Envelope& e) {
  Json j = e;
  return canonical_dump(j);
}

Envelope decode_envelope(std::string_view text) {
  Json j = parse_json(text);
  if (!j.is_object()) throw Error(ErrorCode::MalformedDocument, "envelope must be an object");
  return j.get<Envelope>();
}

std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool ReplayCache::check_and_insert(const Fingerprint& sender, const Bytes& nonce,
                                   std::int64_t now) {
  std::lock_guard lock(mu_);
  if (now - last_purge_ > 60) {
    std::erase_if(seen_, [&](const auto& kv) { return now - kv.second > kReplayRetentionSeconds; });
    last_purge_ = now;
  }
  return seen_.emplace(std::make_pair(sender, nonce), now).second;
}

std::size_t ReplayCache::size() const {
  std::lock_guard lock(mu_);
  return seen_.size();
}

Envelope seal(const Identity& sender, const PublicKeys& recipient,
              std::span<const std::uint8_t> plaintext, std::int64_t now) {
  ensure_sodium();
  Envelope e;
  e.sender = sender.fingerprint();
  e.timestamp = now;
  e.nonce.resize(kNonceBytes);
  randombytes_buf(e.nonce.data(), e.nonce.size());

  Key32 eph_public;
  Key32 eph_secret;
  crypto_box_keypair(eph_public.data(), eph_secret.data());
  Key32 shared;
  if (crypto_scalarmult(shared.data(), eph_secret.data(), recipient.agree.data()) != 0) {
    throw Error(ErrorCode::InvariantViolation, "invalid recipient key");
  }
  sodium_memzero(eph_secret.data(), eph_secret.size());
  const Key32 key = derive_key(shared, e.nonce, eph_public, recipient.agree);
  const Bytes ad = associated_data(e.sender, e.timestamp);
  const std::uint8_t npub[crypto_aead_chacha20poly1305_ietf_NPUBBYTES] = {};

  e.payload.assign(eph_public.begin(), eph_public.end());
  const std::size_t offset = e.payload.size();
  e.payload.resize(offset + plaintext.size() + crypto_aead_chacha20poly1305_ietf_ABYTES);
  unsigned long long len = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt(e.payload.data() + offset, &len, plaintext.data(),
                                            plaintext.size(), ad.data(), ad.size(), nullptr,
                                            npub, key.data());
  e.payload.resize(offset + len);
  e.signature = sender.sign(signed_message(e.sender, e.nonce, e.timestamp, e.payload));
  return e;
}

Opened open(const Identity& recipient, const KeyLookup& known_senders,
            const Envelope& envelope, std::int64_t now, ReplayCache& replay) {
  ensure_sodium();
  const std::optional<PublicKeys> keys = known_senders(envelope.sender);
  if (!keys) throw Error(ErrorCode::UnknownSender, envelope.sender);
  if (keys->fingerprint() != envelope.sender || !verify(*keys, envelope)) {
    throw Error(ErrorCode::SignatureInvalid, "signature does not verify");
  }
  check_fresh(envelope, now, replay);
  return Opened{decrypt(recipient, envelope), envelope.sender};
}

Opened open_bootstrap(const Identity& recipient, const Envelope& envelope,
                      std::int64_t now, ReplayCache& replay,
                      const std::function<PublicKeys(const Bytes&)>& extract_keys) {
  ensure_sodium();
  Bytes plaintext = decrypt(recipient, envelope);
  const PublicKeys keys = extract_keys(plaintext);
  if (keys.fingerprint() != envelope.sender || !verify(keys, envelope)) {
    throw Error(ErrorCode::SignatureInvalid, "enclosed keys do not match the signature");
  }
  check_fresh(envelope, now, replay);
  return Opened{std::move(plaintext), envelope.sender};
}

}  // namespace fleet

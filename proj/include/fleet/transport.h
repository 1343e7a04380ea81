#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "fleet/identity.h"
#include "fleet/json.h"
#include "fleet/model.h"

namespace fleet {

/// One opened message, as seen by a test tap after the envelope layer.
/// Requests are recorded by the receiving side, responses by the caller.
struct TraceEvent {
  std::string kind;       // "request" or "response"
  Fingerprint initiator;  // side that opened the connection
  Fingerprint responder;
  std::string route;      // e.g. "POST /task/update"
  Json body;
  Json request;           // responses only: the body that was sent
  bool local = false;     // a node handing work to itself, no connection
  std::chrono::steady_clock::time_point at;
};

using TraceTap = std::function<void(const TraceEvent&)>;

inline constexpr const char* kEnvelopeHeader = "X-Fleet-Envelope";

/// Public self-description served unauthenticated at GET /node/metadata.
struct NodeMetadata {
  std::string name;
  Fingerprint fingerprint;
  PublicKeys keys;
  NodeMode mode = NodeMode::Default;
  std::string url;
  std::size_t peer_count = 0;
};

void to_json(Json& j, const NodeMetadata& m);
void from_json(const Json& j, NodeMetadata& m);

// Throws Unreachable, or HandshakeFailed when the keys do not hash to the
// advertised fingerprint.
NodeMetadata fetch_metadata(const std::string& url);

/// Caller side of the request/response protocol. Each request is an
/// Envelope sealed to the server whose plaintext binds the route; each
/// response is an Envelope sealed back to the caller.
class Messenger {
 public:
  explicit Messenger(const Identity& self, TraceTap tap = {});

  // Returns the "result" member of the response. Server-side failures are
  // rethrown with their wire code; transport failures raise Unreachable.
  // With `bootstrap`, the caller's public keys travel in the body.
  Json call(const std::string& url, const Fingerprint& server, const PublicKeys& server_keys,
            const std::string& method, const std::string& path, Json body = Json::object(),
            bool bootstrap = false);

 private:
  const Identity& self_;
  TraceTap tap_;
  ReplayCache replay_;
};

struct InboundRequest {
  Fingerprint sender;
  Json body;
  std::optional<PublicKeys> enclosed_keys;  // bootstrap requests only
};

// Opens a request envelope and checks that it was sealed for `route`.
// Bootstrap requests carry the sender's keys in body.keys; others are
// looked up through `known`.
InboundRequest open_request(const Identity& self, const KeyLookup& known, ReplayCache& replay,
                            const std::string& envelope_text, const std::string& route,
                            bool bootstrap);

std::string seal_response(const Identity& self, const PublicKeys& to, const Json& payload);

// HTTP status used for an error code on the wire.
int http_status_for(ErrorCode code);

Json error_payload(const Error& e);

// Rethrows an error payload as the matching exception type.
[[noreturn]] void throw_error_payload(const Json& error);

}  // namespace fleet

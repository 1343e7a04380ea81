#include "fleet/transport.h"

#include <httplib.h>

#include "fleet/planner.h"

namespace fleet {
namespace {

std::unique_ptr<httplib::Client> make_client(const std::string& url) {
  auto cli = std::make_unique<httplib::Client>(url);
  if (!cli->is_valid()) throw Error(ErrorCode::Unreachable, "invalid url '" + url + "'");
  cli->set_connection_timeout(std::chrono::seconds(3));
  cli->set_read_timeout(std::chrono::seconds(60));
  cli->set_write_timeout(std::chrono::seconds(60));
  return cli;
}

Error unreachable(const std::string& url, httplib::Error err) {
  return Error(ErrorCode::Unreachable, url + ": " + httplib::to_string(err));
}

}  // namespace

void to_json(Json& j, const NodeMetadata& m) {
  j = Json{{"fingerprint", m.fingerprint},
           {"keys", m.keys},
           {"mode", to_string(m.mode)},
           {"name", m.name},
           {"peer_count", m.peer_count},
           {"url", m.url}};
}

void from_json(const Json& j, NodeMetadata& m) {
  m.fingerprint = require_as<std::string>(j, "fingerprint");
  m.keys = require(j, "keys").get<PublicKeys>();
  m.mode = node_mode_from_string(require_as<std::string>(j, "mode"));
  m.name = require_as<std::string>(j, "name");
  m.peer_count = require_as<std::size_t>(j, "peer_count");
  m.url = require_as<std::string>(j, "url");
}

NodeMetadata fetch_metadata(const std::string& url) {
  auto cli = make_client(url);
  auto res = cli->Get("/node/metadata");
  if (!res) throw unreachable(url, res.error());
  if (res->status != 200) {
    throw Error(ErrorCode::HandshakeFailed, url + " answered " + std::to_string(res->status));
  }
  NodeMetadata m;
  try {
    m = parse_json(res->body).get<NodeMetadata>();
  } catch (const Error& e) {
    throw Error(ErrorCode::HandshakeFailed, std::string("bad metadata: ") + e.what());
  }
  if (m.keys.fingerprint() != m.fingerprint) {
    throw Error(ErrorCode::HandshakeFailed, "advertised keys do not match the fingerprint");
  }
  return m;
}

Messenger::Messenger(const Identity& self, TraceTap tap) : self_(self), tap_(std::move(tap)) {}

Json Messenger::call(const std::string& url, const Fingerprint& server,
                     const PublicKeys& server_keys, const std::string& method,
                     const std::string& path, Json body, bool bootstrap) {
  const std::string route = method + " " + path;
  if (bootstrap) body["keys"] = self_.public_keys();
  const Json plaintext{{"body", body}, {"route", route}};
  const std::string envelope =
      encode_envelope(seal(self_, server_keys, to_bytes(canonical_dump(plaintext)), unix_now()));

  auto cli = make_client(url);
  httplib::Result res;
  if (method == "GET") {
    res = cli->Get(path, httplib::Headers{{kEnvelopeHeader, envelope}});
  } else {
    res = cli->Post(path, envelope, "application/json");
  }
  if (!res) throw unreachable(url, res.error());

  Json reply;
  const Json raw = [&] {
    try {
      return parse_json(res->body);
    } catch (const Error&) {
      throw Error(ErrorCode::Internal,
                  route + " returned " + std::to_string(res->status) + " with an unreadable body");
    }
  }();
  if (raw.contains("error") && !raw.contains("payload")) {
    // Rejected before the server could seal anything back.
    throw_error_payload(raw.at("error"));
  }
  const KeyLookup lookup = [&](const Fingerprint& f) -> std::optional<PublicKeys> {
    if (f == server) return server_keys;
    return std::nullopt;
  };
  const Opened opened = open(self_, lookup, raw.get<Envelope>(), unix_now(), replay_);
  reply = parse_json(to_string(opened.plaintext));

  if (tap_) {
    tap_(TraceEvent{"response", self_.fingerprint(), server, route,
                    reply.contains("result") ? reply.at("result") : reply.value("error", Json()),
                    body, false, std::chrono::steady_clock::now()});
  }
  if (!reply.value("ok", false)) throw_error_payload(reply.value("error", Json::object()));
  return reply.value("result", Json());
}

InboundRequest open_request(const Identity& self, const KeyLookup& known, ReplayCache& replay,
                            const std::string& envelope_text, const std::string& route,
                            bool bootstrap) {
  const Envelope env = decode_envelope(envelope_text);
  InboundRequest in;
  Opened opened;
  if (bootstrap) {
    opened = open_bootstrap(self, env, unix_now(), replay, [&](const Bytes& plaintext) {
      const Json j = parse_json(to_string(plaintext));
      const PublicKeys keys = require(require(j, "body"), "keys").get<PublicKeys>();
      in.enclosed_keys = keys;
      return keys;
    });
  } else {
    opened = open(self, known, env, unix_now(), replay);
  }
  const Json plaintext = parse_json(to_string(opened.plaintext));
  if (require_as<std::string>(plaintext, "route") != route) {
    throw Error(ErrorCode::SignatureInvalid, "envelope was sealed for another route");
  }
  in.sender = opened.sender;
  in.body = require(plaintext, "body");
  return in;
}

std::string seal_response(const Identity& self, const PublicKeys& to, const Json& payload) {
  return encode_envelope(seal(self, to, to_bytes(canonical_dump(payload)), unix_now()));
}

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownSender:
    case ErrorCode::SignatureInvalid:
    case ErrorCode::StaleTimestamp:
    case ErrorCode::ReplayDetected:
    case ErrorCode::DecryptFailed:
      return 401;
    case ErrorCode::Forbidden:
    case ErrorCode::NotYourTask:
      return 403;
    case ErrorCode::UnknownTask:
    case ErrorCode::UnknownNode:
    case ErrorCode::UnknownProject:
    case ErrorCode::UnknownResource:
    case ErrorCode::UnknownArtifact:
      return 404;
    case ErrorCode::IllegalTransition:
    case ErrorCode::DuplicateArtifact:
    case ErrorCode::DuplicateResource:
    case ErrorCode::NotReady:
      return 409;
    case ErrorCode::ValidationError:
    case ErrorCode::NoDataHolders:
    case ErrorCode::UnassignableTask:
      return 422;
    case ErrorCode::Internal:
      return 500;
    default:
      return 400;
  }
}

Json error_payload(const Error& e) {
  Json j{{"code", error_code_name(e.code())}, {"message", e.what()}};
  if (const auto* v = dynamic_cast<const ValidationError*>(&e)) j["kind"] = v->kind();
  return j;
}

void throw_error_payload(const Json& error) {
  const ErrorCode code = error_code_from_name(error.value("code", std::string("Internal")));
  std::string message = error.value("message", std::string());
  if (code == ErrorCode::ValidationError) {
    const std::string kind = error.value("kind", std::string());
    // The message already carries the "<kind>: " prefix.
    if (message.rfind(kind + ": ", 0) == 0) message.erase(0, kind.size() + 2);
    throw ValidationError(kind, message);
  }
  throw Error(code, message);
}

}  // namespace fleet

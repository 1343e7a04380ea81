#include "fleet/node.h"

#include <httplib.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fleet/json.h"
#include "fleet/table.h"

namespace fleet {
namespace {

std::pair<std::string, int> parse_listen(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw Error(ErrorCode::ConfigInvalid, "listen must be host:port, got '" + listen + "'");
  }
  const std::string host = listen.substr(0, colon);
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(listen.substr(colon + 1), &used);
    if (used != listen.size() - colon - 1) port = -1;
  } catch (const std::exception&) {
    port = -1;
  }
  if (port < 0 || port > 65535) {
    throw Error(ErrorCode::ConfigInvalid, "bad port in listen '" + listen + "'");
  }
  return {host, port};
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DataSource metadata_only(DataSource ds) {
  ds.path.clear();
  return ds;
}

const std::set<std::string> kConfigKeys{
    "datasources", "event_log", "listen", "mode", "name", "poll_interval_ms", "private_key_file",
    "projects", "reference_url", "self_url", "task_timeout_ms", "workers"};

}  // namespace

// --- configuration ---------------------------------------------------------

NodeConfig parse_node_config(std::string_view text, const std::filesystem::path& base_dir) {
  NodeConfig c;
  try {
    const Json j = parse_json(text);
    if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
      if (!kConfigKeys.contains(key)) {
        throw Error(ErrorCode::ConfigInvalid, "unknown config key '" + key + "'");
      }
    }
    c.name = require_as<std::string>(j, "name");
    c.mode = node_mode_from_string(require_as<std::string>(j, "mode"));
    if (j.contains("listen")) c.listen = require_as<std::string>(j, "listen");
    if (j.contains("self_url")) c.self_url = require_as<std::string>(j, "self_url");
    if (j.contains("reference_url")) c.reference_url = require_as<std::string>(j, "reference_url");
    c.private_key_file = resolve(base_dir, require_as<std::string>(j, "private_key_file"));
    if (j.contains("datasources")) {
      for (const Json& d : require(j, "datasources")) {
        DataSource ds;
        ds.data_source_id = require_as<std::string>(d, "id");
        ds.path = resolve(base_dir, require_as<std::string>(d, "path"));
        if (d.contains("columns")) ds.columns = require_as<std::vector<std::string>>(d, "columns");
        ds.project_codes = require_as<std::set<std::string>>(d, "project_codes");
        c.datasources.push_back(std::move(ds));
      }
    }
    if (j.contains("projects")) {
      for (const Json& p : require(j, "projects")) {
        Project project;
        project.code = require_as<std::string>(p, "code");
        project.name = p.contains("name") ? require_as<std::string>(p, "name") : project.code;
        c.projects.push_back(std::move(project));
      }
    }
    if (j.contains("poll_interval_ms")) {
      c.poll_interval = std::chrono::milliseconds(require_as<std::int64_t>(j, "poll_interval_ms"));
    }
    if (j.contains("task_timeout_ms")) {
      c.task_timeout = std::chrono::milliseconds(require_as<std::int64_t>(j, "task_timeout_ms"));
    }
    if (j.contains("workers")) c.workers = require_as<std::size_t>(j, "workers");
    if (j.contains("event_log")) c.event_log = resolve(base_dir, require_as<std::string>(j, "event_log"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigInvalid) throw;
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  check_node_config(c);
  return c;
}

NodeConfig load_node_config(const std::filesystem::path& path) {
  return parse_node_config(read_text(path), path.parent_path());
}

void check_node_config(const NodeConfig& c) {
  auto bad = [](const std::string& why) { throw Error(ErrorCode::ConfigInvalid, why); };
  if (c.name.empty()) bad("name must be non-empty");
  if (c.private_key_file.empty()) bad("private_key_file must be set");
  if (c.mode == NodeMode::Client) {
    if (!c.reference_url) bad("client mode requires reference_url");
    if (c.listen) bad("client mode must not set listen");
    if (c.self_url) bad("client mode must not set self_url");
  } else {
    if (!c.listen) bad("default mode requires listen");
    parse_listen(*c.listen);
  }
  if (c.poll_interval.count() <= 0) bad("poll_interval_ms must be positive");
  if (c.task_timeout.count() <= 0) bad("task_timeout_ms must be positive");
  if (c.workers == 0) bad("workers must be at least 1");
  std::set<std::string> ids;
  for (const auto& ds : c.datasources) {
    if (ds.data_source_id.empty()) bad("data source id must be non-empty");
    if (!ids.insert(ds.data_source_id).second) bad("duplicate data source id " + ds.data_source_id);
  }
  std::set<std::string> codes;
  for (const auto& p : c.projects) {
    if (p.code.empty()) bad("project code must be non-empty");
    if (!codes.insert(p.code).second) bad("duplicate project code " + p.code);
  }
}

Json node_config_to_json(const NodeConfig& c) {
  Json j{{"mode", to_string(c.mode)},
         {"name", c.name},
         {"poll_interval_ms", c.poll_interval.count()},
         {"private_key_file", c.private_key_file},
         {"task_timeout_ms", c.task_timeout.count()},
         {"workers", c.workers}};
  if (c.listen) j["listen"] = *c.listen;
  if (c.self_url) j["self_url"] = *c.self_url;
  if (c.reference_url) j["reference_url"] = *c.reference_url;
  if (c.event_log) j["event_log"] = *c.event_log;
  Json sources = Json::array();
  for (const auto& ds : c.datasources) {
    sources.push_back(Json{{"columns", ds.columns},
                           {"id", ds.data_source_id},
                           {"path", ds.path},
                           {"project_codes", ds.project_codes}});
  }
  j["datasources"] = sources;
  Json projects = Json::array();
  for (const auto& p : c.projects) projects.push_back(Json{{"code", p.code}, {"name", p.name}});
  j["projects"] = projects;
  return j;
}

// --- registry --------------------------------------------------------------

void to_json(Json& j, const PeerInfo& p) {
  Json projects = Json::array();
  for (const auto& pr : p.projects) projects.push_back(Json{{"code", pr.code}, {"name", pr.name}});
  j = Json{{"data_sources", p.data_sources},
           {"fingerprint", p.fingerprint},
           {"keys", p.keys},
           {"mode", to_string(p.mode)},
           {"name", p.name},
           {"projects", projects},
           {"url", p.url ? Json(*p.url) : Json()}};
}

void from_json(const Json& j, PeerInfo& p) {
  p.fingerprint = require_as<std::string>(j, "fingerprint");
  p.name = require_as<std::string>(j, "name");
  p.mode = node_mode_from_string(require_as<std::string>(j, "mode"));
  const Json& url = require(j, "url");
  p.url = url.is_null() ? std::nullopt : std::optional<std::string>(url.get<std::string>());
  p.keys = require(j, "keys").get<PublicKeys>();
  p.data_sources = require_as<std::vector<DataSource>>(j, "data_sources");
  p.projects.clear();
  for (const Json& pr : require(j, "projects")) {
    p.projects.push_back(Project{require_as<std::string>(pr, "code"),
                                 require_as<std::string>(pr, "name"), {}});
  }
}

void to_json(Json& j, const ProjectView& p) {
  std::set<Fingerprint> holders;
  for (const auto& r : p.refs) holders.insert(r.node);
  j = Json{{"code", p.code},
           {"columns", p.columns},
           {"data_source_refs", p.refs},
           {"holder_count", holders.size()},
           {"name", p.name}};
}

bool PeerRegistry::upsert(PeerInfo peer) {
  std::lock_guard lock(mu_);
  const Fingerprint fp = peer.fingerprint;
  return peers_.insert_or_assign(fp, std::move(peer)).second;
}

std::optional<PeerInfo> PeerRegistry::find(const Fingerprint& fp) const {
  std::lock_guard lock(mu_);
  auto it = peers_.find(fp);
  if (it == peers_.end()) return std::nullopt;
  return it->second;
}

std::vector<PeerInfo> PeerRegistry::all() const {
  std::lock_guard lock(mu_);
  std::vector<PeerInfo> out;
  for (const auto& [_, p] : peers_) out.push_back(p);
  return out;
}

std::size_t PeerRegistry::size() const {
  std::lock_guard lock(mu_);
  return peers_.size();
}

std::map<std::string, ProjectView> PeerRegistry::project_directory() const {
  std::lock_guard lock(mu_);
  std::map<std::string, ProjectView> out;
  std::map<std::string, std::string> names;
  for (const auto& [fp, peer] : peers_) {
    for (const auto& pr : peer.projects) names.emplace(pr.code, pr.name);
    for (const auto& ds : peer.data_sources) {
      for (const auto& code : ds.project_codes) {
        auto& view = out[code];
        view.code = code;
        view.refs.push_back(DataSourceRef{fp, ds.data_source_id});
        if (view.columns.empty()) view.columns = ds.columns;
      }
    }
  }
  for (auto& [code, view] : out) {
    std::sort(view.refs.begin(), view.refs.end());
    auto it = names.find(code);
    view.name = it != names.end() ? it->second : code;
  }
  return out;
}

std::vector<NodeDescriptor> PeerRegistry::descriptors() const {
  std::lock_guard lock(mu_);
  std::vector<NodeDescriptor> out;
  for (const auto& [fp, peer] : peers_) out.push_back(NodeDescriptor{fp, peer.mode, peer.data_sources});
  return out;
}

// --- resources -------------------------------------------------------------

Resource ResourceStore::put(const std::string& artifact_id, const std::string& task_id,
                            const std::string& name, Bytes bytes) {
  std::lock_guard lock(mu_);
  Resource r{new_id(), artifact_id, task_id, name, std::move(bytes), ++next_seq_[artifact_id]};
  by_artifact_[artifact_id].push_back(r.resource_id);
  by_id_.emplace(r.resource_id, r);
  return r;
}

std::optional<Resource> ResourceStore::find(const std::string& resource_id) const {
  std::lock_guard lock(mu_);
  auto it = by_id_.find(resource_id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::vector<Resource> ResourceStore::of_artifact(const std::string& artifact_id) const {
  std::lock_guard lock(mu_);
  std::vector<Resource> out;
  auto it = by_artifact_.find(artifact_id);
  if (it == by_artifact_.end()) return out;
  for (const auto& id : it->second) out.push_back(by_id_.at(id));
  return out;
}

std::string_view to_string(Fault f) {
  return f == Fault::TaskException ? "task_exception" : "crash_before_report";
}

Fault fault_from_string(std::string_view s) {
  if (s == "task_exception") return Fault::TaskException;
  if (s == "crash_before_report") return Fault::CrashBeforeReport;
  throw Error(ErrorCode::InvariantViolation, "unknown fault '" + std::string(s) + "'");
}

void init_logging(const std::string& fallback) {
  const char* env = std::getenv("FLEET_LOG");
  const std::string level = env != nullptr && *env != '\0' ? env : fallback;
  static const bool once = [] {
    spdlog::set_default_logger(spdlog::stderr_color_mt("fleet"));
    return true;
  }();
  (void)once;
  spdlog::set_level(spdlog::level::from_str(level));
  spdlog::set_pattern("%Y-%m-%dT%H:%M:%S.%e %^%l%$ %v");
}

// --- node ------------------------------------------------------------------

struct Node::Server {
  httplib::Server http;
  std::thread thread;
};

namespace {

enum class Auth { Known, Bootstrap };

}  // namespace

Node::Node(NodeConfig config, NodeOptions options, Identity identity)
    : config_(std::move(config)),
      options_(std::move(options)),
      identity_(std::move(identity)),
      registry_whitelist_(options_.registry ? *options_.registry
                                            : InstructionRegistry::defaults()) {
  messenger_ = std::make_unique<Messenger>(identity_, options_.trace);
}

std::unique_ptr<Node> Node::start(NodeConfig config, NodeOptions options) {
  check_node_config(config);
  Identity identity = options.identity ? *options.identity
                                       : Identity::load_or_create(config.private_key_file);
  std::unique_ptr<Node> node(new Node(std::move(config), std::move(options), std::move(identity)));
  node->prepare_sources();

  if (node->config_.mode == NodeMode::Default) {
    Scheduler::Options so;
    so.task_timeout = node->config_.task_timeout;
    if (node->config_.event_log) so.event_log = *node->config_.event_log;
    node->scheduler_ = std::make_unique<Scheduler>(so);
    node->serve();
  }
  node->registry_.upsert(node->self_info());
  if (node->scheduler_) node->scheduler_->register_node(node->fingerprint(), node->mode());

  for (std::size_t i = 0; i < node->config_.workers; ++i) {
    node->threads_.emplace_back([n = node.get()] { n->worker_loop(); });
  }
  for (int i = 0; i < 2; ++i) node->threads_.emplace_back([n = node.get()] { n->send_loop(); });

  if (node->config_.reference_url) {
    try {
      node->join_reference();
    } catch (const Error& e) {
      node->stop();
      if (e.code() == ErrorCode::JoinRefused) throw;
      throw Error(ErrorCode::JoinRefused, std::string(error_code_name(e.code())) + ": " + e.what());
    }
  }
  if (node->config_.mode == NodeMode::Client) {
    node->threads_.emplace_back([n = node.get()] { n->poll_loop(); });
  } else {
    node->threads_.emplace_back([n = node.get()] { n->expire_loop(); });
  }
  spdlog::info("{} started as {} node {}{}", node->name(), to_string(node->mode()),
               node->fingerprint().substr(0, 12),
               node->url_.empty() ? std::string() : " at " + node->url_);
  return node;
}

Node::~Node() { stop(); }

void Node::stop() {
  if (stopped_.exchange(true)) return;
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (server_) {
    server_->http.stop();
    if (server_->thread.joinable()) server_->thread.join();
  }
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
}

void Node::prepare_sources() {
  for (auto& ds : config_.datasources) {
    if (!std::filesystem::exists(ds.path)) {
      throw Error(ErrorCode::DataSourceMissing,
                  "data source '" + ds.data_source_id + "' not found at " + ds.path);
    }
    const auto header = read_csv_header(ds.path);
    if (ds.columns.empty()) {
      ds.columns = header;
    } else if (ds.columns != header) {
      throw Error(ErrorCode::ConfigInvalid,
                  "data source '" + ds.data_source_id + "' header does not match its columns");
    }
  }
}

PeerInfo Node::self_info() const {
  PeerInfo p;
  p.fingerprint = identity_.fingerprint();
  p.name = config_.name;
  p.mode = config_.mode;
  if (config_.mode == NodeMode::Default) p.url = url_;
  p.keys = identity_.public_keys();
  for (const auto& ds : config_.datasources) p.data_sources.push_back(metadata_only(ds));
  p.projects = config_.projects;
  return p;
}

std::optional<PublicKeys> Node::lookup_keys(const Fingerprint& fp) const {
  if (auto peer = registry_.find(fp)) return peer->keys;
  std::lock_guard lock(mu_);
  auto it = workbenches_.find(fp);
  if (it != workbenches_.end()) return it->second;
  return std::nullopt;
}

void Node::trace_local(const std::string& route, const Json& body) {
  if (!options_.trace) return;
  options_.trace(TraceEvent{"request", fingerprint(), fingerprint(), route, body, Json(), true,
                            std::chrono::steady_clock::now()});
}

std::string Node::scheduler_url(const Fingerprint& scheduler) const {
  const auto peer = registry_.find(scheduler);
  if (peer && peer->url) return *peer->url;
  throw Error(ErrorCode::Unreachable, "no address for scheduler " + scheduler.substr(0, 12));
}

// --- HTTP service ----------------------------------------------------------

void Node::serve() {
  server_ = std::make_unique<Server>();
  auto& http = server_->http;
  const auto [host, port] = parse_listen(*config_.listen);

  using Handler = std::function<Json(const InboundRequest&, const httplib::Request&)>;
  auto add = [this, &http](const std::string& method, const std::string& pattern, Auth auth,
                           Handler handler) {
    auto wrapped = [this, method, auth, handler](const httplib::Request& req,
                                                 httplib::Response& res) {
      const std::string route = method + " " + req.path;
      const std::string text =
          method == "GET" ? req.get_header_value(kEnvelopeHeader) : req.body;
      InboundRequest in;
      try {
        const KeyLookup known = [this](const Fingerprint& f) { return lookup_keys(f); };
        in = open_request(identity_, known, replay_, text, route, auth == Auth::Bootstrap);
      } catch (const Error& e) {
        spdlog::debug("{} rejected {}: {}", name(), route, e.what());
        res.status = 401;
        res.set_content(canonical_dump(Json{{"error", error_payload(e)}}), "application/json");
        return;
      }
      if (options_.trace) {
        options_.trace(TraceEvent{"request", in.sender, fingerprint(), route, in.body, Json(), false,
                                  std::chrono::steady_clock::now()});
      }
      Json payload;
      try {
        Json result = handler(in, req);
        payload = Json{{"ok", true}, {"result", std::move(result)}};
        res.status = 200;
      } catch (const Error& e) {
        spdlog::debug("{} {} failed: {}", name(), route, e.what());
        payload = Json{{"error", error_payload(e)}, {"ok", false}};
        res.status = http_status_for(e.code());
      } catch (const std::exception& e) {
        spdlog::error("{} {} crashed: {}", name(), route, e.what());
        payload = Json{{"error", error_payload(Error(ErrorCode::Internal, e.what()))}, {"ok", false}};
        res.status = 500;
      }
      const PublicKeys keys = in.enclosed_keys ? *in.enclosed_keys : *lookup_keys(in.sender);
      res.set_content(seal_response(identity_, keys, payload), "application/json");
    };
    if (method == "GET") {
      http.Get(pattern, wrapped);
    } else {
      http.Post(pattern, wrapped);
    }
  };

  auto require_scheduler = [this]() -> Scheduler& {
    if (!scheduler_) throw Error(ErrorCode::Forbidden, "scheduler disabled on this node");
    return *scheduler_;
  };
  auto require_workbench = [this](const Fingerprint& fp) {
    std::lock_guard lock(mu_);
    if (!workbenches_.contains(fp)) throw Error(ErrorCode::Forbidden, "not a connected workbench");
  };

  http.Get("/node/metadata", [this](const httplib::Request&, httplib::Response& res) {
    NodeMetadata m{config_.name, fingerprint(), public_keys(), config_.mode, url_,
                   registry_.size()};
    res.set_content(canonical_dump(Json(m)), "application/json");
  });

  add("POST", "/node/join", Auth::Bootstrap, [this](const InboundRequest& in, const auto&) {
    PeerInfo peer;
    try {
      peer = require(in.body, "peer").get<PeerInfo>();
    } catch (const Error& e) {
      throw Error(ErrorCode::MalformedJoin, e.what());
    }
    if (peer.fingerprint != in.sender || peer.keys != *in.enclosed_keys) {
      throw Error(ErrorCode::MalformedJoin, "peer entry does not match the sender");
    }
    if (peer.mode == NodeMode::Client) {
      peer.url.reset();
    } else if (!peer.url || peer.url->empty()) {
      throw Error(ErrorCode::MalformedJoin, "default-mode peers must advertise a url");
    }
    for (auto& ds : peer.data_sources) ds.path.clear();
    for (const auto& existing : registry_.all()) {
      if (existing.name == peer.name && existing.fingerprint != peer.fingerprint) {
        spdlog::warn("{}: {} joins with a name already used by {}", name(), peer.name,
                     existing.fingerprint.substr(0, 12));
      }
    }
    const bool added = registry_.upsert(peer);
    if (scheduler_) scheduler_->register_node(peer.fingerprint, peer.mode);
    spdlog::info("{}: {} {} ({})", name(), added ? "joined" : "re-joined", peer.name,
                 to_string(peer.mode));
    announce(peer);
    Json projects = Json::object();
    for (const auto& [code, view] : registry_.project_directory()) projects[code] = view;
    return Json{{"accepted", true}, {"peers", registry_.all()}, {"projects", projects}};
  });

  add("POST", "/node/announce", Auth::Known, [this](const InboundRequest& in, const auto&) {
    const auto sender = registry_.find(in.sender);
    if (!sender || sender->mode != NodeMode::Default) {
      throw Error(ErrorCode::Forbidden, "announcements come from default-mode peers");
    }
    PeerInfo peer = require(in.body, "peer").get<PeerInfo>();
    if (peer.fingerprint != peer.keys.fingerprint()) {
      throw Error(ErrorCode::MalformedJoin, "announced keys do not match the fingerprint");
    }
    if (peer.fingerprint == fingerprint()) return Json::object();
    registry_.upsert(peer);
    if (scheduler_) scheduler_->register_node(peer.fingerprint, peer.mode);
    return Json::object();
  });

  add("POST", "/task/dispatch", Auth::Known, [this](const InboundRequest& in, const auto&) {
    Task task = require(in.body, "task").get<Task>();
    if (task.assigned_node != fingerprint()) throw Error(ErrorCode::NotYourTask, task.task_id);
    if (task.scheduler != in.sender) {
      throw Error(ErrorCode::Forbidden, "only the scheduling node may dispatch its tasks");
    }
    enqueue(std::move(task), false);
    return Json::object();
  });

  add("POST", "/task/abort", Auth::Known, [this](const InboundRequest& in, const auto&) {
    cancel(require_as<std::vector<std::string>>(in.body, "tasks"));
    return Json::object();
  });

  add("POST", "/task/update", Auth::Known,
      [this, require_scheduler](const InboundRequest& in, const auto&) {
        Scheduler& s = require_scheduler();
        const std::string task_id = require_as<std::string>(in.body, "task_id");
        const auto task = s.find_task(task_id);
        if (!task) throw Error(ErrorCode::UnknownTask, task_id);
        if (task->assigned_node != in.sender) throw Error(ErrorCode::NotYourTask, task_id);
        const TaskStatus status =
            task_status_from_string(require_as<std::string>(in.body, "status"));
        const auto outcome =
            s.on_task_update(task_id, status, require_as<std::vector<std::string>>(in.body, "resources"),
                             in.body.value("reason", std::string()));
        apply_outcome(outcome);
        return Json::object();
      });

  add("POST", "/task/poll", Auth::Known,
      [this, require_scheduler](const InboundRequest& in, const auto&) {
        Scheduler& s = require_scheduler();
        const auto tasks = s.next_tasks_for(in.sender);
        Json aborts = Json::array();
        for (const auto& n : s.take_aborts_for(in.sender)) {
          aborts.push_back(Json{{"artifact_id", n.artifact_id},
                                {"failed_task", n.failed_task},
                                {"reason", n.reason},
                                {"tasks", n.tasks}});
        }
        return Json{{"aborts", aborts}, {"tasks", tasks}};
      });

  add("POST", "/resource", Auth::Known,
      [this, require_scheduler](const InboundRequest& in, const auto&) {
        Scheduler& s = require_scheduler();
        const std::string task_id = require_as<std::string>(in.body, "task_id");
        const auto task = s.find_task(task_id);
        if (!task) throw Error(ErrorCode::UnknownTask, task_id);
        if (task->assigned_node != in.sender) throw Error(ErrorCode::NotYourTask, task_id);
        if (task->status != TaskStatus::Running) {
          throw Error(ErrorCode::Forbidden, "resources are accepted only from running tasks");
        }
        const Resource r = store_.put(task->artifact_id, task_id,
                                      require_as<std::string>(in.body, "name"),
                                      base64_decode(require_as<std::string>(in.body, "bytes")));
        return Json{{"resource_id", r.resource_id}};
      });

  add("GET", R"(/resource/([^/]+))", Auth::Known,
      [this, require_scheduler](const InboundRequest& in, const httplib::Request& req) {
        Scheduler& s = require_scheduler();
        const std::string id = req.matches[1];
        const auto r = store_.find(id);
        if (!r) throw Error(ErrorCode::UnknownResource, id);
        bool allowed = false;
        {
          std::lock_guard lock(mu_);
          auto it = submitters_.find(r->artifact_id);
          allowed = it != submitters_.end() && it->second == in.sender;
        }
        if (!allowed) {
          for (const auto& t : s.snapshot(r->artifact_id).tasks) {
            if (t.assigned_node != in.sender) continue;
            if (t.task_id == r->task_id ||
                std::find(t.input_resources.begin(), t.input_resources.end(), id) !=
                    t.input_resources.end()) {
              allowed = true;
              break;
            }
          }
        }
        if (!allowed) throw Error(ErrorCode::Forbidden, "resource " + id);
        return Json{{"resource", *r}};
      });

  add("POST", "/workbench/connect", Auth::Bootstrap, [this](const InboundRequest& in, const auto&) {
    {
      std::lock_guard lock(mu_);
      workbenches_[in.sender] = *in.enclosed_keys;
    }
    spdlog::info("{}: workbench {} connected", name(), in.sender.substr(0, 12));
    return Json{{"fingerprint", fingerprint()}, {"name", config_.name}};
  });

  add("GET", R"(/workbench/project/([^/]+))", Auth::Known,
      [this, require_workbench](const InboundRequest& in, const httplib::Request& req) {
        require_workbench(in.sender);
        const std::string code = req.matches[1];
        const auto dir = registry_.project_directory();
        auto it = dir.find(code);
        if (it == dir.end()) throw Error(ErrorCode::UnknownProject, code);
        return Json(it->second);
      });

  add("POST", "/workbench/artifact", Auth::Known,
      [this, require_workbench, require_scheduler](const InboundRequest& in, const auto&) {
        require_workbench(in.sender);
        Scheduler& s = require_scheduler();
        Artifact artifact;
        artifact.artifact_id = new_id();
        artifact.project_code = require_as<std::string>(in.body, "project_code");
        artifact.instructions = require_as<std::vector<Instruction>>(in.body, "instructions");
        artifact.submitted_by = in.sender;
        validate(artifact.instructions, registry_whitelist_);
        if (!registry_.project_directory().contains(artifact.project_code)) {
          throw Error(ErrorCode::UnknownProject, artifact.project_code);
        }
        TaskGraph graph = compile(artifact, registry_.descriptors(), fingerprint());
        const std::size_t n = graph.size();
        {
          std::lock_guard lock(mu_);
          submitters_[artifact.artifact_id] = in.sender;
        }
        deliver(s.on_submit(std::move(graph)));
        spdlog::info("{}: artifact {} accepted with {} tasks", name(), artifact.artifact_id, n);
        return Json{{"artifact_id", artifact.artifact_id}, {"tasks", n}};
      });

  add("GET", R"(/workbench/artifact/([^/]+)/status)", Auth::Known,
      [this, require_workbench, require_scheduler](const InboundRequest& in,
                                                   const httplib::Request& req) {
        require_workbench(in.sender);
        const auto snap = require_scheduler().snapshot(req.matches[1]);
        Json tasks = Json::array();
        for (const auto& t : snap.tasks) {
          tasks.push_back(Json{{"block", instruction_kind(t.instruction)},
                               {"node", t.assigned_node},
                               {"reason", t.reason},
                               {"status", to_string(t.status)},
                               {"task_id", t.task_id}});
        }
        return Json{{"artifact_id", snap.artifact_id},
                    {"reason", snap.reason},
                    {"status", to_string(snap.status)},
                    {"tasks", tasks}};
      });

  add("GET", R"(/workbench/artifact/([^/]+)/latest)", Auth::Known,
      [this, require_workbench, require_scheduler](const InboundRequest& in,
                                                   const httplib::Request& req) {
        require_workbench(in.sender);
        const std::string id = req.matches[1];
        const auto snap = require_scheduler().snapshot(id);
        {
          std::lock_guard lock(mu_);
          auto it = submitters_.find(id);
          if (it == submitters_.end() || it->second != in.sender) {
            throw Error(ErrorCode::Forbidden, "artifact " + id + " was submitted by another workbench");
          }
        }
        if (snap.status == ArtifactStatus::Aborted) {
          throw Error(ErrorCode::NotReady, "artifact aborted: " + snap.reason);
        }
        if (snap.status != ArtifactStatus::Completed) {
          throw Error(ErrorCode::NotReady, "artifact is " + std::string(to_string(snap.status)));
        }
        Json resources = Json::object();
        if (!snap.tasks.empty()) {
          const Task& last = snap.tasks.back();
          std::map<std::string, Resource> latest;
          for (const auto& rid : last.produced_resources) {
            const auto r = store_.find(rid);
            if (!r) continue;
            auto it = latest.find(r->name);
            if (it == latest.end() || it->second.created_seq < r->created_seq) {
              latest[r->name] = *r;
            }
          }
          for (const auto& [rname, r] : latest) resources[rname] = base64_encode(r.bytes);
        }
        return Json{{"resources", resources}};
      });

  int bound = port == 0 ? http.bind_to_any_port(host) : (http.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw Error(ErrorCode::ConfigInvalid, "cannot listen on " + *config_.listen);
  }
  port_ = bound;
  url_ = config_.self_url ? *config_.self_url : "http://" + host + ":" + std::to_string(bound);
  server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
}

// --- membership ------------------------------------------------------------

void Node::join_reference() {
  const NodeMetadata ref = fetch_metadata(*config_.reference_url);
  if (ref.mode != NodeMode::Default) {
    throw Error(ErrorCode::JoinRefused, "reference node is not in default mode");
  }
  const Json result = messenger_->call(*config_.reference_url, ref.fingerprint, ref.keys, "POST",
                                       "/node/join", Json{{"peer", self_info()}}, true);
  if (!result.value("accepted", false)) throw Error(ErrorCode::JoinRefused, "join not accepted");
  for (const Json& p : require(result, "peers")) {
    PeerInfo peer = p.get<PeerInfo>();
    if (peer.fingerprint == fingerprint()) continue;
    if (peer.fingerprint != peer.keys.fingerprint()) continue;
    if (peer.fingerprint == ref.fingerprint) peer.url = *config_.reference_url;
    registry_.upsert(peer);
    if (scheduler_) scheduler_->register_node(peer.fingerprint, peer.mode);
  }
  reference_ = ref;
  spdlog::info("{} joined via {} ({} peers)", name(), ref.name, registry_.size());
}

void Node::announce(const PeerInfo& newcomer) {
  for (const auto& peer : registry_.all()) {
    if (peer.fingerprint == fingerprint() || peer.fingerprint == newcomer.fingerprint) continue;
    if (peer.mode != NodeMode::Default || !peer.url) continue;
    post_async([this, peer, newcomer] {
      messenger_->call(*peer.url, peer.fingerprint, peer.keys, "POST", "/node/announce",
                       Json{{"peer", newcomer}});
    });
  }
}

// --- scheduling side -------------------------------------------------------

void Node::deliver(const std::vector<DispatchIntent>& intents) {
  for (const auto& intent : intents) {
    if (intent.node == fingerprint()) {
      trace_local("POST /task/dispatch", Json{{"task", intent.task}});
      enqueue(intent.task, true);
      continue;
    }
    const auto peer = registry_.find(intent.node);
    post_async([this, peer, task = intent.task] {
      try {
        if (!peer || !peer->url) throw Error(ErrorCode::Unreachable, "no address for assignee");
        messenger_->call(*peer->url, peer->fingerprint, peer->keys, "POST", "/task/dispatch",
                         Json{{"task", task}});
      } catch (const Error& e) {
        spdlog::warn("{}: dispatch of {} failed: {}", name(), task.task_id, e.what());
        try {
          scheduler_->on_task_update(task.task_id, TaskStatus::Running);
          apply_outcome(scheduler_->on_task_update(
              task.task_id, TaskStatus::Failed, {},
              std::string(error_code_name(e.code())) + ": " + e.what()));
        } catch (const Error&) {
        }
      }
    });
  }
}

void Node::notify_aborts(const std::vector<AbortNotice>& notices) {
  for (const auto& n : notices) {
    if (n.node == fingerprint()) {
      cancel(n.tasks);
      continue;
    }
    const auto peer = registry_.find(n.node);
    // Client-mode peers pick the notice up on their next poll.
    if (!peer || peer->mode != NodeMode::Default || !peer->url) continue;
    post_async([this, peer, n] {
      messenger_->call(*peer->url, peer->fingerprint, peer->keys, "POST", "/task/abort",
                       Json{{"artifact_id", n.artifact_id}, {"reason", n.reason}, {"tasks", n.tasks}});
    });
  }
}

void Node::apply_outcome(const UpdateOutcome& outcome) {
  deliver(outcome.dispatch);
  notify_aborts(outcome.aborts);
}

void Node::post_async(std::function<void()> fn) {
  {
    std::lock_guard lock(mu_);
    if (stopping_) return;
    sends_.push_back(std::move(fn));
  }
  cv_.notify_all();
}

void Node::send_loop() {
  while (true) {
    std::function<void()> fn;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !sends_.empty(); });
      if (stopping_) return;
      fn = std::move(sends_.front());
      sends_.pop_front();
    }
    try {
      fn();
    } catch (const Error& e) {
      spdlog::warn("{}: outbound message failed: {}", name(), e.what());
    } catch (const std::exception& e) {
      spdlog::error("{}: outbound message crashed: {}", name(), e.what());
    }
  }
}

void Node::expire_loop() {
  const auto period = std::clamp<std::chrono::milliseconds>(
      config_.task_timeout / 4, std::chrono::milliseconds(10), std::chrono::milliseconds(1000));
  std::unique_lock lock(mu_);
  while (!stopping_) {
    cv_.wait_for(lock, period, [this] { return stopping_; });
    if (stopping_) return;
    lock.unlock();
    try {
      notify_aborts(scheduler_->expire().aborts);
    } catch (const Error& e) {
      spdlog::error("{}: expiry sweep failed: {}", name(), e.what());
    }
    lock.lock();
  }
}

// --- executing side --------------------------------------------------------

void Node::enqueue(Task task, bool /*local*/) {
  {
    std::lock_guard lock(mu_);
    if (stopping_) return;
    jobs_.push_back(Job{std::move(task)});
  }
  cv_.notify_all();
}

void Node::worker_loop() {
  while (true) {
    Job job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
      if (stopping_) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    try {
      execute(job.task);
    } catch (const std::exception& e) {
      spdlog::error("{}: task {} crashed the worker: {}", name(), job.task.task_id, e.what());
    }
  }
}

void Node::cancel(const std::vector<std::string>& task_ids) {
  std::lock_guard lock(mu_);
  cancelled_.insert(task_ids.begin(), task_ids.end());
}

bool Node::is_cancelled(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  return cancelled_.contains(task_id);
}

void Node::inject_fault(Fault fault) {
  std::lock_guard lock(mu_);
  fault_ = fault;
}

NamedBytes Node::fetch_inputs(const Task& task) {
  NamedBytes out;
  for (const auto& id : task.input_resources) {
    if (task.scheduler == fingerprint()) {
      const auto r = store_.find(id);
      if (!r) throw Error(ErrorCode::UnknownResource, id);
      out.emplace_back(r->name, r->bytes);
      continue;
    }
    const auto peer = registry_.find(task.scheduler);
    if (!peer) throw Error(ErrorCode::UnknownNode, task.scheduler);
    const Json result = messenger_->call(scheduler_url(task.scheduler), peer->fingerprint,
                                         peer->keys, "GET", "/resource/" + id);
    const Resource r = require(result, "resource").get<Resource>();
    out.emplace_back(r.name, r.bytes);
  }
  return out;
}

void Node::report(const Task& task, TaskStatus status, const NamedBytes& resources,
                  const std::string& reason) {
  std::vector<std::string> ids;
  if (task.scheduler == fingerprint()) {
    if (!scheduler_) throw Error(ErrorCode::Forbidden, "scheduler disabled on this node");
    for (const auto& [rname, bytes] : resources) {
      trace_local("POST /resource", Json{{"bytes", base64_encode(bytes)},
                                         {"name", rname},
                                         {"task_id", task.task_id}});
      ids.push_back(store_.put(task.artifact_id, task.task_id, rname, bytes).resource_id);
    }
    trace_local("POST /task/update", Json{{"reason", reason},
                                          {"resources", ids},
                                          {"status", to_string(status)},
                                          {"task_id", task.task_id}});
    apply_outcome(scheduler_->on_task_update(task.task_id, status, ids, reason));
    return;
  }
  const auto peer = registry_.find(task.scheduler);
  if (!peer) throw Error(ErrorCode::UnknownNode, task.scheduler);
  const std::string url = scheduler_url(task.scheduler);
  for (const auto& [rname, bytes] : resources) {
    const Json r = messenger_->call(url, peer->fingerprint, peer->keys, "POST", "/resource",
                                    Json{{"bytes", base64_encode(bytes)},
                                         {"name", rname},
                                         {"task_id", task.task_id}});
    ids.push_back(require_as<std::string>(r, "resource_id"));
  }
  messenger_->call(url, peer->fingerprint, peer->keys, "POST", "/task/update",
                   Json{{"reason", reason},
                        {"resources", ids},
                        {"status", to_string(status)},
                        {"task_id", task.task_id}});
}

void Node::execute(const Task& task) {
  if (is_cancelled(task.task_id)) return;
  std::optional<Fault> fault;
  {
    std::lock_guard lock(mu_);
    fault = std::exchange(fault_, std::nullopt);
  }
  try {
    report(task, TaskStatus::Running, {}, {});
  } catch (const Error& e) {
    spdlog::warn("{}: could not start {}: {}", name(), task.task_id, e.what());
    return;
  }
  if (fault == Fault::CrashBeforeReport) {
    spdlog::warn("{}: injected crash, {} will never be reported", name(), task.task_id);
    ++executed_;
    return;
  }

  TaskResult result;
  if (fault == Fault::TaskException) {
    result = TaskResult{TaskStatus::Failed, {}, "task_exception: injected fault"};
  } else {
    try {
      TaskContext ctx;
      ctx.self = fingerprint();
      ctx.data_sources = config_.datasources;
      ctx.registry = &registry_whitelist_;
      ctx.inputs = fetch_inputs(task);
      ctx.cancelled = [this, id = task.task_id] { return is_cancelled(id); };
      result = run_task(task, ctx);
    } catch (const Error& e) {
      result = TaskResult{TaskStatus::Failed, {},
                          std::string(error_code_name(e.code())) + ": " + e.what()};
    }
  }
  if (is_cancelled(task.task_id)) result = TaskResult{TaskStatus::Failed, {}, "cancelled"};
  ++executed_;
  try {
    report(task, result.status, result.resources, result.reason);
  } catch (const Error& e) {
    spdlog::warn("{}: could not report {}: {}", name(), task.task_id, e.what());
  }
}

void Node::poll_loop() {
  const auto& ref = *reference_;
  std::unique_lock lock(mu_);
  while (!stopping_) {
    cv_.wait_for(lock, config_.poll_interval, [this] { return stopping_; });
    if (stopping_) return;
    lock.unlock();
    try {
      const Json result = messenger_->call(*config_.reference_url, ref.fingerprint, ref.keys,
                                           "POST", "/task/poll");
      ++polls_;
      for (const Json& a : require(result, "aborts")) {
        cancel(require_as<std::vector<std::string>>(a, "tasks"));
      }
      for (const Json& t : require(result, "tasks")) enqueue(t.get<Task>(), false);
    } catch (const Error& e) {
      spdlog::warn("{}: poll failed: {}", name(), e.what());
    }
    lock.lock();
  }
}

}  // namespace fleet

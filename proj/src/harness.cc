#include "fleet/harness.h"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "fleet/json.h"

extern char** environ;

namespace fleet {
namespace {

using Ms = std::chrono::duration<double, std::milli>;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedDocument, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::SpawnFailed, "cannot write " + path.string());
}

std::filesystem::path make_workdir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "fleet-fed-XXXXXX").string();
  if (mkdtemp(tmpl.data()) == nullptr) throw Error(ErrorCode::SpawnFailed, "mkdtemp failed");
  return tmpl;
}

// Reads one line from `fd` before `deadline`. Returns nullopt on EOF or
// timeout.
std::optional<std::string> read_line(int fd, std::chrono::steady_clock::time_point deadline) {
  std::string line;
  while (std::chrono::steady_clock::now() < deadline) {
    char c = 0;
    const ssize_t n = ::read(fd, &c, 1);
    if (n == 1) {
      if (c == '\n') return line;
      line.push_back(c);
    } else if (n == 0) {
      return std::nullopt;
    } else if (errno == EAGAIN || errno == EWOULDBLOCK) {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    } else if (errno != EINTR) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

std::set<unsigned long> socket_inodes(int pid) {
  std::set<unsigned long> out;
  const std::filesystem::path fd_dir = "/proc/" + std::to_string(pid) + "/fd";
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(fd_dir, ec)) {
    std::error_code link_ec;
    const std::string target = std::filesystem::read_symlink(entry.path(), link_ec).string();
    if (link_ec || target.rfind("socket:[", 0) != 0) continue;
    out.insert(std::stoul(target.substr(8, target.size() - 9)));
  }
  return out;
}

// inode -> local port of every TCP socket in LISTEN state.
std::map<unsigned long, int> listening_table() {
  std::map<unsigned long, int> out;
  for (const char* file : {"/proc/net/tcp", "/proc/net/tcp6"}) {
    std::ifstream in(file);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::string slot, local, remote, state, queues, timer, retr, uid, timeout;
      unsigned long inode = 0;
      row >> slot >> local >> remote >> state >> queues >> timer >> retr >> uid >> timeout >> inode;
      if (state != "0A") continue;
      const auto colon = local.rfind(':');
      out[inode] = static_cast<int>(std::stoul(local.substr(colon + 1), nullptr, 16));
    }
  }
  return out;
}

const Fingerprint kNoFingerprint;

}  // namespace

// --- spec ------------------------------------------------------------------

FederationSpec parse_federation_spec(std::string_view text) {
  const Json j = parse_json(text);
  FederationSpec spec;
  spec.name = require_as<std::string>(j, "name");
  spec.entry = require_as<std::string>(j, "entry");
  if (j.contains("projects")) {
    for (const Json& p : require(j, "projects")) {
      spec.projects.push_back(Project{require_as<std::string>(p, "code"),
                                      require_as<std::string>(p, "name"), {}});
    }
  }
  for (const Json& p : require(j, "parties")) {
    PartySpec party;
    party.name = require_as<std::string>(p, "name");
    party.mode = node_mode_from_string(require_as<std::string>(p, "mode"));
    party.seed = require_as<std::uint64_t>(p, "seed");
    if (p.contains("sources")) {
      for (const Json& s : require(p, "sources")) {
        party.sources.push_back(SourceFixture{require_as<std::string>(s, "id"),
                                              require_as<std::string>(s, "csv"),
                                              require_as<std::set<std::string>>(s, "project_codes")});
      }
    }
    spec.parties.push_back(std::move(party));
  }
  check_federation_spec(spec);
  return spec;
}

FederationSpec load_federation_spec(const std::filesystem::path& path) {
  return parse_federation_spec(read_file(path));
}

void check_federation_spec(const FederationSpec& spec) {
  auto bad = [](const std::string& why) { throw Error(ErrorCode::SpawnFailed, why); };
  std::set<std::string> names;
  std::set<std::uint64_t> seeds;
  bool any_default = false;
  for (const auto& p : spec.parties) {
    if (p.name.empty()) bad("party names must be non-empty");
    if (!names.insert(p.name).second) bad("duplicate party name " + p.name);
    if (!seeds.insert(p.seed).second) bad("duplicate identity seed for " + p.name);
    any_default = any_default || p.mode == NodeMode::Default;
  }
  if (!any_default) bad("a federation needs at least one default-mode party");
  const auto entry = std::find_if(spec.parties.begin(), spec.parties.end(),
                                  [&](const PartySpec& p) { return p.name == spec.entry; });
  if (entry == spec.parties.end()) bad("entry point " + spec.entry + " is not a party");
  if (entry->mode != NodeMode::Default) bad("entry point must be a default-mode party");
}

// --- federation ------------------------------------------------------------

Federation::Federation(FederationSpec spec, SpawnOptions options)
    : spec_(std::move(spec)), options_(std::move(options)), dir_(make_workdir()) {}

Federation::~Federation() { teardown(); }

std::unique_ptr<Federation> Federation::spawn(const FederationSpec& spec, SpawnOptions options) {
  check_federation_spec(spec);
  if (options.separate_process && !std::filesystem::exists(options.node_binary)) {
    throw Error(ErrorCode::SpawnFailed, "node binary not found: " + options.node_binary.string());
  }
  std::unique_ptr<Federation> fed(new Federation(spec, std::move(options)));
  try {
    std::vector<const PartySpec*> order;
    for (const auto& p : spec.parties) {
      if (p.mode == NodeMode::Default) order.push_back(&p);
    }
    for (const auto& p : spec.parties) {
      if (p.mode == NodeMode::Client) order.push_back(&p);
    }
    std::optional<std::string> first_url;
    for (const PartySpec* p : order) {
      std::optional<std::string> reference = first_url;
      if (p->mode == NodeMode::Client) {
        reference = fed->urls_.at(spec.entry);
        // Clients join once the default-mode parties know each other.
        fed->wait_for_membership();
      }
      fed->start_party(*p, reference);
      if (!first_url) first_url = fed->urls_.at(p->name);
    }
    fed->wait_for_membership();
    fed->entry_url_ = fed->urls_.at(spec.entry);
  } catch (const Error& e) {
    fed->teardown();
    if (e.code() == ErrorCode::SpawnFailed) throw;
    throw Error(ErrorCode::SpawnFailed, std::string(error_code_name(e.code())) + ": " + e.what());
  }
  return fed;
}

NodeConfig Federation::config_for(const PartySpec& party,
                                  const std::optional<std::string>& reference) const {
  const auto home = dir_ / party.name;
  NodeConfig c;
  c.name = party.name;
  c.mode = party.mode;
  if (party.mode == NodeMode::Default) c.listen = "127.0.0.1:0";
  c.reference_url = reference;
  c.private_key_file = (home / "node.key").string();
  c.projects = spec_.projects;
  c.poll_interval = options_.poll_interval;
  c.task_timeout = options_.task_timeout;
  c.workers = 2;
  for (const auto& s : party.sources) {
    DataSource ds;
    ds.data_source_id = s.id;
    ds.path = (home / (s.id + ".csv")).string();
    ds.project_codes = s.project_codes;
    write_file(ds.path, s.csv);
    c.datasources.push_back(std::move(ds));
  }
  return c;
}

void Federation::start_party(const PartySpec& party, const std::optional<std::string>& reference) {
  const NodeConfig config = config_for(party, reference);
  const Identity identity = Identity::generate(party.seed);
  fingerprints_[party.name] = identity.fingerprint();

  if (!options_.separate_process) {
    NodeOptions no;
    no.identity = identity;
    no.trace = tap();
    auto node = Node::start(config, std::move(no));
    urls_[party.name] = node->url();
    nodes_[party.name] = std::move(node);
    return;
  }

  identity.save(config.private_key_file);
  const auto config_path = dir_ / party.name / "node.json";
  write_file(config_path, canonical_dump(node_config_to_json(config)));

  int pipe_fds[2];
  if (::pipe(pipe_fds) != 0) throw Error(ErrorCode::SpawnFailed, "pipe failed");
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, pipe_fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, pipe_fds[0]);
  const std::string bin = options_.node_binary.string();
  const std::string cfg = config_path.string();
  std::vector<char*> argv{const_cast<char*>(bin.c_str()), const_cast<char*>("--config"),
                          const_cast<char*>(cfg.c_str()), nullptr};
  std::vector<std::string> env_strings;
  for (char** e = environ; *e != nullptr; ++e) env_strings.emplace_back(*e);
  const bool has_level = std::any_of(env_strings.begin(), env_strings.end(),
                                     [](const std::string& e) { return e.rfind("FLEET_LOG=", 0) == 0; });
  if (!has_level) env_strings.push_back("FLEET_LOG=" + options_.log_level);
  std::vector<char*> envp;
  for (auto& e : env_strings) envp.push_back(e.data());
  envp.push_back(nullptr);
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, bin.c_str(), &actions, nullptr, argv.data(), envp.data());
  posix_spawn_file_actions_destroy(&actions);
  ::close(pipe_fds[1]);
  if (rc != 0) {
    ::close(pipe_fds[0]);
    throw Error(ErrorCode::SpawnFailed, "cannot launch " + bin);
  }
  ::fcntl(pipe_fds[0], F_SETFL, ::fcntl(pipe_fds[0], F_GETFL) | O_NONBLOCK);
  children_[party.name] = Child{pid, pipe_fds[0]};

  const auto deadline = std::chrono::steady_clock::now() + options_.ready_timeout;
  while (true) {
    const auto line = read_line(pipe_fds[0], deadline);
    if (!line) throw Error(ErrorCode::SpawnFailed, party.name + " did not report ready");
    std::istringstream words(*line);
    std::string tag, url, fp;
    words >> tag >> url >> fp;
    if (tag != "ready") continue;
    if (fp != identity.fingerprint()) {
      throw Error(ErrorCode::SpawnFailed, party.name + " came up with another identity");
    }
    urls_[party.name] = url == "-" ? std::string() : url;
    return;
  }
}

void Federation::wait_for_membership() {
  std::size_t expected = 0;
  for (const auto& p : spec_.parties) expected += urls_.contains(p.name) ? 1 : 0;
  const auto deadline = std::chrono::steady_clock::now() + options_.ready_timeout;
  while (true) {
    bool converged = true;
    for (const auto& p : spec_.parties) {
      if (p.mode != NodeMode::Default || !urls_.contains(p.name)) continue;
      std::size_t peers = 0;
      if (auto it = nodes_.find(p.name); it != nodes_.end()) {
        peers = it->second->peers().size();
      } else {
        peers = fetch_metadata(urls_.at(p.name)).peer_count;
      }
      converged = converged && peers == expected;
    }
    if (converged) return;
    if (std::chrono::steady_clock::now() > deadline) {
      throw Error(ErrorCode::SpawnFailed, "peer registries did not converge");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

void Federation::teardown() {
  if (torn_down_) return;
  torn_down_ = true;
  // Clients first so none of them polls a stopped reference.
  for (auto& [_, node] : nodes_) {
    if (node->mode() == NodeMode::Client) node->stop();
  }
  for (auto& [_, node] : nodes_) node->stop();
  nodes_.clear();
  for (auto& [_, child] : children_) {
    ::kill(child.pid, SIGTERM);
  }
  for (auto& [_, child] : children_) {
    int status = 0;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    while (::waitpid(child.pid, &status, WNOHANG) == 0) {
      if (std::chrono::steady_clock::now() > deadline) {
        ::kill(child.pid, SIGKILL);
        ::waitpid(child.pid, &status, 0);
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::close(child.out_fd);
  }
  children_.clear();
  std::error_code ec;
  std::filesystem::remove_all(dir_, ec);
}

const std::string& Federation::entry_url() const { return entry_url_; }

std::string Federation::url_of(const std::string& party) const {
  auto it = urls_.find(party);
  return it == urls_.end() ? std::string() : it->second;
}

const Fingerprint& Federation::fingerprint_of(const std::string& party) const {
  auto it = fingerprints_.find(party);
  return it == fingerprints_.end() ? kNoFingerprint : it->second;
}

std::string Federation::party_of(const Fingerprint& fp) const {
  for (const auto& [name, f] : fingerprints_) {
    if (f == fp) return name;
  }
  return "workbench";
}

Node* Federation::node(const std::string& party) {
  auto it = nodes_.find(party);
  return it == nodes_.end() ? nullptr : it->second.get();
}

void Federation::inject_failure(const std::string& party, Fault fault) {
  Node* n = node(party);
  if (n == nullptr) {
    throw Error(ErrorCode::InvariantViolation,
                "fault injection needs an in-process party, got " + party);
  }
  n->inject_fault(fault);
}

std::vector<TraceEvent> Federation::trace() const {
  std::lock_guard lock(trace_mu_);
  return trace_;
}

void Federation::clear_trace() {
  std::lock_guard lock(trace_mu_);
  trace_.clear();
}

TraceTap Federation::tap() {
  return [this](const TraceEvent& e) {
    std::lock_guard lock(trace_mu_);
    trace_.push_back(e);
  };
}

std::size_t Federation::listening_sockets() const {
  if (!options_.separate_process) return count_listening_sockets(::getpid());
  std::size_t n = 0;
  for (const auto& [_, child] : children_) n += count_listening_sockets(child.pid);
  return n;
}

std::size_t Federation::listening_sockets_of(const std::string& party) const {
  if (auto it = children_.find(party); it != children_.end()) {
    return count_listening_sockets(it->second.pid);
  }
  auto it = nodes_.find(party);
  if (it == nodes_.end()) return 0;
  const auto port = it->second->listening_port();
  if (!port) return 0;
  const auto mine = socket_inodes(::getpid());
  std::size_t n = 0;
  for (const auto& [inode, p] : listening_table()) {
    if (p == *port && mine.contains(inode)) ++n;
  }
  return n;
}

std::size_t count_listening_sockets(int pid) {
  const auto mine = socket_inodes(pid);
  std::size_t n = 0;
  for (const auto& [inode, _] : listening_table()) n += mine.contains(inode) ? 1 : 0;
  return n;
}

// --- scenario --------------------------------------------------------------

std::vector<Instruction> forest_plan(std::uint32_t n_estimators, double test_percentage,
                                       std::uint64_t random_state) {
  const Json plan = Json::array(
      {Json{{"kind", "parallel"},
            {"steps",
             Json::array({Json{{"kind", "train_test"},
                               {"model", Json{{"kind", "random_forest"},
                                              {"max_depth", 5},
                                              {"n_estimators", n_estimators},
                                              {"random_state", random_state},
                                              {"strategy", "merge"}}},
                               {"query", Json{{"transformers",
                                               Json::array({Json{{"kind", "federated_splitter"},
                                                                 {"label", "target"},
                                                                 {"random_state", random_state},
                                                                 {"test_percentage",
                                                                  test_percentage}}})}}}},
                          Json{{"kind", "collect"}}})}},
       Json{{"kind", "finalize"},
            {"steps", Json::array({Json{{"kind", "aggregation"}, {"strategy", "merge"}}})}}});
  return plan.get<std::vector<Instruction>>();
}

int label_step(const TraceEvent& e, const std::map<std::string, std::string>& block_of_task) {
  const Json& body = e.kind == "response" ? e.request : e.body;
  auto block_of = [&](const std::string& task_id) {
    auto it = block_of_task.find(task_id);
    return it == block_of_task.end() ? std::string() : it->second;
  };
  if (e.route == "POST /workbench/artifact") return 1;
  if (e.route == "POST /task/dispatch" && body.contains("task")) {
    const std::string block = block_of(body.at("task").value("task_id", std::string()));
    return block == "finalize" ? 4 : 2;
  }
  if (e.route == "POST /task/poll") {
    const bool carries = e.kind == "response" && e.body.is_object() && e.body.contains("tasks") &&
                         !e.body.at("tasks").empty();
    return carries ? 2 : 0;
  }
  if (e.route == "POST /task/update" || e.route == "POST /resource") {
    const std::string block = block_of(body.value("task_id", std::string()));
    if (block == "parallel") return 3;
    if (block == "finalize") return 4;
    return 0;
  }
  if (e.route.rfind("GET /workbench/artifact/", 0) == 0 && e.route.ends_with("/latest")) return 5;
  return 0;
}

Json PipelineReport::to_json() const {
  Json steps_json = Json::object();
  for (const auto& [step, t] : steps) {
    steps_json[std::to_string(step)] =
        Json{{"first_ms", t.first_ms}, {"last_ms", t.last_ms}, {"messages", t.messages}};
  }
  Json trace_json = Json::array();
  for (const auto& r : trace) {
    trace_json.push_back(Json{{"at_ms", r.at_ms},
                              {"initiator", r.initiator},
                              {"kind", r.kind},
                              {"local", r.local},
                              {"responder", r.responder},
                              {"route", r.route},
                              {"step", r.step}});
  }
  return Json{{"artifact_id", artifact_id},
              {"elapsed_ms", elapsed_ms},
              {"model_base64", base64_encode(model)},
              {"status", fleet::to_json(status)},
              {"steps", steps_json},
              {"trace", trace_json}};
}

PipelineReport run_pipeline(Federation& federation, const std::vector<Instruction>& plan,
                            const std::string& project_code, std::chrono::milliseconds timeout) {
  federation.clear_trace();
  const auto t0 = std::chrono::steady_clock::now();
  PipelineReport report;
  Context ctx = Context::connect(federation.entry_url(), Identity::generate(), federation.tap());
  const ArtifactHandle handle = ctx.submit(project_code, plan);
  report.artifact_id = handle.artifact_id;
  const auto remaining = std::max(std::chrono::milliseconds(1),
                                  timeout - std::chrono::duration_cast<std::chrono::milliseconds>(
                                                std::chrono::steady_clock::now() - t0));
  report.status = ctx.wait(handle, remaining, std::chrono::milliseconds(10));
  if (report.status.status == ArtifactStatus::Completed) {
    auto resources = ctx.get_latest_resource(handle);
    if (auto it = resources.find("model"); it != resources.end()) report.model = it->second;
  }
  report.elapsed_ms = Ms(std::chrono::steady_clock::now() - t0).count();

  std::map<std::string, std::string> block_of_task;
  for (const auto& t : report.status.tasks) block_of_task[t.task_id] = t.block;
  auto events = federation.trace();
  std::stable_sort(events.begin(), events.end(),
                   [](const TraceEvent& a, const TraceEvent& b) { return a.at < b.at; });
  for (const auto& e : events) {
    TraceRecord r;
    r.step = label_step(e, block_of_task);
    r.kind = e.kind;
    r.initiator = federation.party_of(e.initiator);
    r.responder = federation.party_of(e.responder);
    r.route = e.route;
    r.local = e.local;
    r.at_ms = Ms(e.at - t0).count();
    r.body = e.body;
    if (r.step > 0) {
      StepTiming& s = report.steps[r.step];
      if (s.messages == 0) s.first_ms = r.at_ms;
      s.last_ms = r.at_ms;
      ++s.messages;
    }
    report.trace.push_back(std::move(r));
  }
  return report;
}

}  // namespace fleet

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fleet/executor.h"
#include "fleet/identity.h"
#include "fleet/model.h"
#include "fleet/planner.h"
#include "fleet/scheduler.h"
#include "fleet/transport.h"

namespace fleet {

struct NodeConfig {
  std::string name;
  NodeMode mode = NodeMode::Default;
  std::optional<std::string> listen;  // host:port, port 0 picks a free one
  std::optional<std::string> self_url;
  std::optional<std::string> reference_url;
  std::string private_key_file;
  std::vector<DataSource> datasources;
  std::vector<Project> projects;
  std::chrono::milliseconds poll_interval{2000};
  std::chrono::milliseconds task_timeout{300000};
  std::size_t workers = 4;
  std::optional<std::string> event_log;
};

// Relative paths resolve against `base_dir`. Throws ConfigInvalid.
NodeConfig parse_node_config(std::string_view text, const std::filesystem::path& base_dir = {});
NodeConfig load_node_config(const std::filesystem::path& path);
void check_node_config(const NodeConfig& config);
Json node_config_to_json(const NodeConfig& config);

/// What a node knows about another party. Data-source entries carry
/// metadata only: ids, columns and project codes.
struct PeerInfo {
  Fingerprint fingerprint;
  std::string name;
  NodeMode mode = NodeMode::Default;
  std::optional<std::string> url;  // absent for client-mode peers
  PublicKeys keys;
  std::vector<DataSource> data_sources;
  std::vector<Project> projects;  // names this party declared
  friend bool operator==(const PeerInfo&, const PeerInfo&) = default;
};

void to_json(Json& j, const PeerInfo& p);
void from_json(const Json& j, PeerInfo& p);

struct ProjectView {
  std::string code;
  std::string name;
  std::vector<DataSourceRef> refs;  // sorted
  std::vector<std::string> columns;  // of the first ref
};

void to_json(Json& j, const ProjectView& p);

class PeerRegistry {
 public:
  // Returns true if the fingerprint was new. Re-joining replaces metadata.
  bool upsert(PeerInfo peer);
  std::optional<PeerInfo> find(const Fingerprint& fp) const;
  std::vector<PeerInfo> all() const;  // by fingerprint
  std::size_t size() const;
  std::map<std::string, ProjectView> project_directory() const;
  std::vector<NodeDescriptor> descriptors() const;

 private:
  mutable std::mutex mu_;
  std::map<Fingerprint, PeerInfo> peers_;
};

class ResourceStore {
 public:
  Resource put(const std::string& artifact_id, const std::string& task_id,
               const std::string& name, Bytes bytes);
  std::optional<Resource> find(const std::string& resource_id) const;
  std::vector<Resource> of_artifact(const std::string& artifact_id) const;  // by created_seq

 private:
  mutable std::mutex mu_;
  std::map<std::string, Resource> by_id_;
  std::map<std::string, std::vector<std::string>> by_artifact_;
  std::map<std::string, std::uint64_t> next_seq_;
};

enum class Fault { TaskException, CrashBeforeReport };

std::string_view to_string(Fault f);
Fault fault_from_string(std::string_view s);

struct NodeOptions {
  // Replaces the key file; used by harnesses for reproducible fingerprints.
  std::optional<Identity> identity;
  TraceTap trace;
  std::optional<InstructionRegistry> registry;
};

/// A running node. Default-mode nodes serve HTTP and schedule artifacts
/// submitted to them; client-mode nodes only poll their reference node.
class Node {
 public:
  // Throws ConfigInvalid, DataSourceMissing or JoinRefused.
  static std::unique_ptr<Node> start(NodeConfig config, NodeOptions options = {});
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  void stop();

  const std::string& name() const { return config_.name; }
  NodeMode mode() const { return config_.mode; }
  const Fingerprint& fingerprint() const { return identity_.fingerprint(); }
  const PublicKeys& public_keys() const { return identity_.public_keys(); }
  // Empty for client-mode nodes.
  const std::string& url() const { return url_; }
  std::optional<int> listening_port() const { return port_; }

  std::vector<PeerInfo> peers() const { return registry_.all(); }
  std::map<std::string, ProjectView> project_directory() const {
    return registry_.project_directory();
  }
  // Null on client-mode nodes, whose scheduler is disabled.
  const Scheduler* scheduler() const { return scheduler_.get(); }
  const ResourceStore& resources() const { return store_; }

  // Arms a fault for the next task this node executes.
  void inject_fault(Fault fault);
  // Number of poll requests sent (client mode).
  std::uint64_t polls_sent() const { return polls_.load(); }
  // Tasks executed to completion or failure on this node.
  std::uint64_t tasks_executed() const { return executed_.load(); }

 private:
  Node(NodeConfig config, NodeOptions options, Identity identity);

  struct Job {
    Task task;
  };

  void prepare_sources();
  void serve();
  void join_reference();
  void announce(const PeerInfo& newcomer);
  PeerInfo self_info() const;
  std::optional<PublicKeys> lookup_keys(const Fingerprint& fp) const;

  void deliver(const std::vector<DispatchIntent>& intents);
  void notify_aborts(const std::vector<AbortNotice>& notices);
  void apply_outcome(const UpdateOutcome& outcome);

  void enqueue(Task task, bool local);
  void worker_loop();
  void execute(const Task& task);
  NamedBytes fetch_inputs(const Task& task);
  void report(const Task& task, TaskStatus status, const NamedBytes& resources,
              const std::string& reason);
  void cancel(const std::vector<std::string>& task_ids);
  bool is_cancelled(const std::string& task_id) const;

  void post_async(std::function<void()> fn);
  void send_loop();
  void poll_loop();
  void expire_loop();

  std::string scheduler_url(const Fingerprint& scheduler) const;
  void trace_local(const std::string& route, const Json& body);

  NodeConfig config_;
  NodeOptions options_;
  Identity identity_;
  InstructionRegistry registry_whitelist_;
  PeerRegistry registry_;
  ResourceStore store_;
  std::unique_ptr<Scheduler> scheduler_;
  std::unique_ptr<Messenger> messenger_;
  ReplayCache replay_;

  struct Server;
  std::unique_ptr<Server> server_;
  std::string url_;
  std::optional<int> port_;
  std::optional<NodeMetadata> reference_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  std::deque<Job> jobs_;
  std::deque<std::function<void()>> sends_;
  std::set<std::string> cancelled_;
  std::map<Fingerprint, PublicKeys> workbenches_;
  std::map<std::string, Fingerprint> submitters_;  // artifact -> workbench
  std::optional<Fault> fault_;
  std::vector<std::thread> threads_;
  std::atomic<std::uint64_t> polls_{0};
  std::atomic<std::uint64_t> executed_{0};
  std::atomic<bool> stopped_{false};
};

// Reads FLEET_LOG (trace, debug, info, warn, error, off); `fallback` applies
// when it is unset.
void init_logging(const std::string& fallback = "info");

}  // namespace fleet

#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fleet/node.h"
#include "fleet/workbench.h"

namespace fleet {

struct SourceFixture {
  std::string id;
  std::string csv;  // inline file contents
  std::set<std::string> project_codes;
};

struct PartySpec {
  std::string name;
  NodeMode mode = NodeMode::Default;
  std::uint64_t seed = 0;  // identity seed
  std::vector<SourceFixture> sources;
};

struct FederationSpec {
  std::string name;
  std::string entry;  // party name of the entry point
  std::vector<Project> projects;
  std::vector<PartySpec> parties;  // declaration order
};

// Throws MalformedDocument, or SpawnFailed when the spec is inconsistent.
FederationSpec parse_federation_spec(std::string_view text);
FederationSpec load_federation_spec(const std::filesystem::path& path);
void check_federation_spec(const FederationSpec& spec);

struct SpawnOptions {
  // Launch each party as a fleet-node process instead of in this process.
  bool separate_process = false;
  std::filesystem::path node_binary;
  // FLEET_LOG for node processes when the environment does not set it.
  std::string log_level = "warn";
  std::chrono::milliseconds poll_interval{50};
  std::chrono::milliseconds task_timeout{std::chrono::seconds(300)};
  std::chrono::milliseconds ready_timeout{std::chrono::seconds(15)};
};

/// One labelled message of the run. Step 0 marks traffic outside the
/// five-step flow (membership, status polling, empty polls).
struct TraceRecord {
  int step = 0;
  std::string kind;
  std::string initiator;  // party name, or "workbench"
  std::string responder;
  std::string route;
  bool local = false;
  double at_ms = 0;  // since the run started
  Json body;
};

struct StepTiming {
  std::size_t messages = 0;
  double first_ms = 0;
  double last_ms = 0;
};

struct PipelineReport {
  std::string artifact_id;
  ArtifactStatusReport status;
  Bytes model;  // empty unless COMPLETED
  double elapsed_ms = 0;
  std::map<int, StepTiming> steps;
  std::vector<TraceRecord> trace;

  Json to_json() const;
};

/// A federation launched from a spec. The first default-mode party cold
/// starts; the remaining default-mode parties then the client-mode parties
/// warm start in declaration order.
class Federation {
 public:
  // Throws SpawnFailed.
  static std::unique_ptr<Federation> spawn(const FederationSpec& spec, SpawnOptions options = {});
  ~Federation();
  Federation(const Federation&) = delete;
  Federation& operator=(const Federation&) = delete;

  // Stops every node and removes the fixture directory. Idempotent.
  void teardown();

  const FederationSpec& spec() const { return spec_; }
  const std::string& entry_url() const;
  std::string url_of(const std::string& party) const;  // empty for client-mode parties
  const Fingerprint& fingerprint_of(const std::string& party) const;
  std::string party_of(const Fingerprint& fp) const;  // "workbench" when unknown
  bool separate_process() const { return options_.separate_process; }

  // In-process mode only; null otherwise.
  Node* node(const std::string& party);

  // Next task executed by `party` fails per `fault`.
  void inject_failure(const std::string& party, Fault fault);

  // Messages observed so far (in-process nodes and harness workbenches).
  std::vector<TraceEvent> trace() const;
  void clear_trace();
  TraceTap tap();

  // Listening TCP sockets owned by the node processes, or by this process in
  // in-process mode.
  std::size_t listening_sockets() const;
  std::size_t listening_sockets_of(const std::string& party) const;

  std::filesystem::path workdir() const { return dir_; }

 private:
  explicit Federation(FederationSpec spec, SpawnOptions options);
  void start_party(const PartySpec& party, const std::optional<std::string>& reference);
  void wait_for_membership();
  NodeConfig config_for(const PartySpec& party, const std::optional<std::string>& reference) const;

  struct Child {
    int pid = -1;
    int out_fd = -1;
  };

  FederationSpec spec_;
  SpawnOptions options_;
  std::filesystem::path dir_;
  std::map<std::string, std::unique_ptr<Node>> nodes_;
  std::map<std::string, Child> children_;
  std::map<std::string, Fingerprint> fingerprints_;
  std::map<std::string, std::string> urls_;
  std::string entry_url_;

  mutable std::mutex trace_mu_;
  std::vector<TraceEvent> trace_;
  bool torn_down_ = false;
};

// The reference pipeline: parallel train/test with a federated split, then
// collect, then a finalize block that merges the local forests.
std::vector<Instruction> forest_plan(std::uint32_t n_estimators = 10,
                                       double test_percentage = 0.2,
                                       std::uint64_t random_state = 42);

// Submits `plan` to the entry point, waits for a terminal state, fetches the
// result and labels every message exchanged meanwhile. Throws Timeout.
PipelineReport run_pipeline(Federation& federation, const std::vector<Instruction>& plan,
                            const std::string& project_code = "p1",
                            std::chrono::milliseconds timeout = std::chrono::seconds(60));

// Step number of one message, given the blocks of the artifact's tasks.
int label_step(const TraceEvent& event, const std::map<std::string, std::string>& block_of_task);

// Listening TCP sockets (IPv4 and IPv6) held by the given process.
std::size_t count_listening_sockets(int pid);

}  // namespace fleet

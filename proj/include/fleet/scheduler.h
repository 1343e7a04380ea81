#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fleet/model.h"
#include "fleet/planner.h"

namespace fleet {

enum class ArtifactStatus { Submitted, Running, Completed, Aborted };

std::string_view to_string(ArtifactStatus s);
ArtifactStatus artifact_status_from_string(std::string_view s);

struct DispatchIntent {
  Fingerprint node;
  Task task;
};

/// Sent to every node that may still hold work for an aborted artifact.
struct AbortNotice {
  std::string artifact_id;
  std::string failed_task;
  std::string reason;
  Fingerprint node;
  std::vector<std::string> tasks;
};

struct UpdateOutcome {
  std::vector<DispatchIntent> dispatch;
  std::vector<AbortNotice> aborts;
};

struct ArtifactSnapshot {
  std::string artifact_id;
  ArtifactStatus status = ArtifactStatus::Submitted;
  std::string reason;
  std::vector<Task> tasks;  // creation order
};

/// Task lifecycle owner for the artifacts submitted to one entry point.
/// All public operations are serialized by an internal mutex, so each call
/// applies as a single atomic event.
class Scheduler {
 public:
  using Clock = std::chrono::steady_clock;

  struct Options {
    std::chrono::milliseconds task_timeout{std::chrono::seconds(300)};
    std::size_t max_poll = 16;
    std::optional<std::filesystem::path> event_log;
  };

  Scheduler();
  explicit Scheduler(Options options);

  void register_node(const Fingerprint& node, NodeMode mode);
  bool knows_node(const Fingerprint& node) const;

  // Throws DuplicateArtifact.
  std::vector<DispatchIntent> on_submit(TaskGraph graph,
                                        Clock::time_point now = Clock::now());

  // `status` must be RUNNING, COMPLETED or FAILED. Throws UnknownTask or
  // IllegalTransition.
  UpdateOutcome on_task_update(const std::string& task_id, TaskStatus status,
                               const std::vector<std::string>& resources = {},
                               const std::string& reason = {},
                               Clock::time_point now = Clock::now());

  // Drains up to max_n (default Options::max_poll) queued tasks. Throws
  // UnknownNode.
  std::vector<Task> next_tasks_for(const Fingerprint& node,
                                   std::optional<std::size_t> max_n = std::nullopt,
                                   Clock::time_point now = Clock::now());

  // Abort notices waiting for a polling node; drained on read.
  std::vector<AbortNotice> take_aborts_for(const Fingerprint& node);

  // Fails delivered tasks with no progress for longer than the timeout.
  UpdateOutcome expire(Clock::time_point now = Clock::now());

  std::optional<Task> find_task(const std::string& task_id) const;
  ArtifactSnapshot snapshot(const std::string& artifact_id) const;
  std::vector<std::string> artifacts() const;
  std::size_t total_tasks() const;
  std::size_t outbox_size(const Fingerprint& node) const;

 private:
  struct TaskMeta {
    bool delivered = false;
    Clock::time_point last_activity{};
  };
  struct ArtifactState {
    TaskGraph graph;
    ArtifactStatus status = ArtifactStatus::Submitted;
    std::string reason;
    std::map<std::string, TaskMeta> meta;
  };
  struct NodeState {
    NodeMode mode = NodeMode::Default;
    std::deque<std::pair<std::string, std::string>> outbox;  // (artifact, task)
    std::vector<AbortNotice> aborts;
  };

  ArtifactState& artifact_of(const std::string& task_id);
  std::vector<DispatchIntent> release_ready(ArtifactState& a, Clock::time_point now);
  std::vector<AbortNotice> abort(ArtifactState& a, const Task& failed);
  void fill_inputs(ArtifactState& a, Task& task) const;
  void log_event(const std::string& line);

  Options options_;
  mutable std::mutex mu_;
  std::map<std::string, ArtifactState> artifacts_;
  std::map<std::string, std::string> task_index_;  // task -> artifact
  std::map<Fingerprint, NodeState> nodes_;
  std::ofstream log_;
  std::uint64_t seq_ = 0;
};

}  // namespace fleet

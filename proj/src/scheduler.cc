#include "fleet/scheduler.h"

#include <algorithm>

#include "fleet/json.h"

namespace fleet {
namespace {

const char* artifact_status_names[] = {"SUBMITTED", "RUNNING", "COMPLETED", "ABORTED"};

bool collects(const Task& t) {
  if (t.instruction.is<Finalize>()) return true;
  if (const auto* p = std::get_if<Parallel>(&t.instruction.body)) {
    return !p->steps.empty() && p->steps.back().is<Collect>();
  }
  return false;
}

}  // namespace

std::string_view to_string(ArtifactStatus s) {
  return artifact_status_names[static_cast<int>(s)];
}

ArtifactStatus artifact_status_from_string(std::string_view s) {
  for (int i = 0; i < 4; ++i) {
    if (s == artifact_status_names[i]) return static_cast<ArtifactStatus>(i);
  }
  throw Error(ErrorCode::MalformedDocument, "unknown artifact status");
}

Scheduler::Scheduler() : Scheduler(Options{}) {}

Scheduler::Scheduler(Options options) : options_(std::move(options)) {
  if (options_.event_log) {
    log_.open(*options_.event_log, std::ios::app);
    if (!log_) {
      throw Error(ErrorCode::ConfigInvalid,
                  "cannot open event log " + options_.event_log->string());
    }
  }
}

void Scheduler::register_node(const Fingerprint& node, NodeMode mode) {
  std::lock_guard lock(mu_);
  nodes_[node].mode = mode;
}

bool Scheduler::knows_node(const Fingerprint& node) const {
  std::lock_guard lock(mu_);
  return nodes_.contains(node);
}

void Scheduler::log_event(const std::string& line) {
  if (log_.is_open()) {
    log_ << line << '\n';
    log_.flush();
  }
}

Scheduler::ArtifactState& Scheduler::artifact_of(const std::string& task_id) {
  auto it = task_index_.find(task_id);
  if (it == task_index_.end()) throw Error(ErrorCode::UnknownTask, task_id);
  return artifacts_.at(it->second);
}

void Scheduler::fill_inputs(ArtifactState& a, Task& task) const {
  task.input_resources.clear();
  for (const auto& dep_id : task.depends_on) {
    const Task& dep = a.graph.at(dep_id);
    if (!collects(dep)) continue;
    task.input_resources.insert(task.input_resources.end(),
                                dep.produced_resources.begin(),
                                dep.produced_resources.end());
  }
}

std::vector<DispatchIntent> Scheduler::release_ready(ArtifactState& a,
                                                     Clock::time_point now) {
  std::vector<DispatchIntent> out;
  const auto ready = ready_set(a.graph);
  for (const auto& id : a.graph.order) {
    if (!ready.contains(id)) continue;
    Task& task = a.graph.at(id);
    check_transition(task.status, TaskStatus::Eligible);
    task.status = TaskStatus::Eligible;
    fill_inputs(a, task);
    log_event(canonical_dump(Json{{"event", "task_update"},
                                  {"seq", ++seq_},
                                  {"status", to_string(task.status)},
                                  {"task", id}}));
    auto node_it = nodes_.find(task.assigned_node);
    if (node_it != nodes_.end() && node_it->second.mode == NodeMode::Client) {
      node_it->second.outbox.emplace_back(a.graph.artifact_id, id);
    } else {
      auto& meta = a.meta[id];
      meta.delivered = true;
      meta.last_activity = now;
      out.push_back(DispatchIntent{task.assigned_node, task});
    }
  }
  const bool all_done =
      std::all_of(a.graph.tasks.begin(), a.graph.tasks.end(),
                  [](const auto& kv) { return kv.second.status == TaskStatus::Completed; });
  if (all_done) {
    a.status = ArtifactStatus::Completed;
    log_event(canonical_dump(Json{{"artifact", a.graph.artifact_id},
                                  {"event", "artifact_completed"},
                                  {"seq", ++seq_}}));
  }
  return out;
}

std::vector<AbortNotice> Scheduler::abort(ArtifactState& a, const Task& failed) {
  a.status = ArtifactStatus::Aborted;
  a.reason = "task " + failed.task_id + " failed: " + failed.reason;
  std::map<Fingerprint, std::vector<std::string>> affected;
  for (const auto& id : a.graph.order) {
    Task& task = a.graph.at(id);
    if (task.status == TaskStatus::Running) {
      affected[task.assigned_node].push_back(id);
    } else if (task.status == TaskStatus::Created || task.status == TaskStatus::Eligible) {
      const bool delivered = a.meta[id].delivered;
      task.status = TaskStatus::Cancelled;
      task.reason = "artifact aborted";
      if (delivered) affected[task.assigned_node].push_back(id);
    }
  }
  for (auto& [fp, node] : nodes_) {
    std::erase_if(node.outbox,
                  [&](const auto& entry) { return entry.first == a.graph.artifact_id; });
  }
  log_event(canonical_dump(Json{{"artifact", a.graph.artifact_id},
                                {"event", "artifact_aborted"},
                                {"reason", a.reason},
                                {"seq", ++seq_}}));
  std::vector<AbortNotice> notices;
  for (auto& [fp, tasks] : affected) {
    AbortNotice n{a.graph.artifact_id, failed.task_id, failed.reason, fp, tasks};
    auto node_it = nodes_.find(fp);
    if (node_it != nodes_.end() && node_it->second.mode == NodeMode::Client) {
      node_it->second.aborts.push_back(n);
    }
    notices.push_back(std::move(n));
  }
  return notices;
}

std::vector<DispatchIntent> Scheduler::on_submit(TaskGraph graph, Clock::time_point now) {
  std::lock_guard lock(mu_);
  if (artifacts_.contains(graph.artifact_id)) {
    throw Error(ErrorCode::DuplicateArtifact, graph.artifact_id);
  }
  topological_order(graph);
  for (const auto& [id, _] : graph.tasks) {
    if (task_index_.contains(id)) throw Error(ErrorCode::InvariantViolation, "task id reused");
  }
  const std::string artifact_id = graph.artifact_id;
  for (const auto& [id, _] : graph.tasks) task_index_.emplace(id, artifact_id);
  auto& a = artifacts_[artifact_id];
  a.graph = std::move(graph);
  a.status = ArtifactStatus::Running;
  log_event(canonical_dump(Json{{"artifact", artifact_id},
                                {"event", "submit"},
                                {"seq", ++seq_},
                                {"tasks", a.graph.order}}));
  return release_ready(a, now);
}

UpdateOutcome Scheduler::on_task_update(const std::string& task_id, TaskStatus status,
                                        const std::vector<std::string>& resources,
                                        const std::string& reason, Clock::time_point now) {
  std::lock_guard lock(mu_);
  ArtifactState& a = artifact_of(task_id);
  Task& task = a.graph.at(task_id);
  if (status != TaskStatus::Running && status != TaskStatus::Completed &&
      status != TaskStatus::Failed) {
    throw Error(ErrorCode::IllegalTransition,
                "executors may only report RUNNING, COMPLETED or FAILED");
  }
  check_transition(task.status, status);
  task.status = status;
  auto& meta = a.meta[task_id];
  meta.delivered = true;
  meta.last_activity = now;
  if (status == TaskStatus::Completed) task.produced_resources = resources;
  if (status == TaskStatus::Failed) task.reason = reason.empty() ? "failed" : reason;
  log_event(canonical_dump(Json{{"event", "task_update"},
                                {"seq", ++seq_},
                                {"status", to_string(status)},
                                {"task", task_id}}));

  UpdateOutcome out;
  if (a.status != ArtifactStatus::Running) return out;
  if (status == TaskStatus::Completed) {
    out.dispatch = release_ready(a, now);
  } else if (status == TaskStatus::Failed) {
    out.aborts = abort(a, task);
  }
  return out;
}

std::vector<Task> Scheduler::next_tasks_for(const Fingerprint& node,
                                            std::optional<std::size_t> max_n,
                                            Clock::time_point now) {
  std::lock_guard lock(mu_);
  auto it = nodes_.find(node);
  if (it == nodes_.end()) throw Error(ErrorCode::UnknownNode, node);
  const std::size_t limit = max_n.value_or(options_.max_poll);
  std::vector<Task> out;
  auto& outbox = it->second.outbox;
  while (!outbox.empty() && out.size() < limit) {
    auto [artifact_id, task_id] = outbox.front();
    outbox.pop_front();
    auto& a = artifacts_.at(artifact_id);
    const Task& task = a.graph.at(task_id);
    if (task.status != TaskStatus::Eligible) continue;
    auto& meta = a.meta[task_id];
    meta.delivered = true;
    meta.last_activity = now;
    out.push_back(task);
    log_event(canonical_dump(
        Json{{"event", "deliver"}, {"node", node}, {"seq", ++seq_}, {"task", task_id}}));
  }
  return out;
}

std::vector<AbortNotice> Scheduler::take_aborts_for(const Fingerprint& node) {
  std::lock_guard lock(mu_);
  auto it = nodes_.find(node);
  if (it == nodes_.end()) return {};
  return std::exchange(it->second.aborts, {});
}

UpdateOutcome Scheduler::expire(Clock::time_point now) {
  std::lock_guard lock(mu_);
  UpdateOutcome out;
  for (auto& [artifact_id, a] : artifacts_) {
    for (const auto& id : a.graph.order) {
      Task& task = a.graph.at(id);
      auto& meta = a.meta[id];
      if (!meta.delivered) continue;
      if (task.status != TaskStatus::Eligible && task.status != TaskStatus::Running) continue;
      if (now - meta.last_activity <= options_.task_timeout) continue;
      // A delivered task counts as started; a silent executor then fails it.
      if (task.status == TaskStatus::Eligible) task.status = TaskStatus::Running;
      check_transition(task.status, TaskStatus::Failed);
      task.status = TaskStatus::Failed;
      task.reason = "timeout";
      log_event(canonical_dump(Json{{"event", "task_update"},
                                    {"reason", "timeout"},
                                    {"seq", ++seq_},
                                    {"status", "FAILED"},
                                    {"task", id}}));
      if (a.status == ArtifactStatus::Running) {
        auto notices = abort(a, task);
        out.aborts.insert(out.aborts.end(), notices.begin(), notices.end());
      }
    }
  }
  return out;
}

std::optional<Task> Scheduler::find_task(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  auto it = task_index_.find(task_id);
  if (it == task_index_.end()) return std::nullopt;
  return artifacts_.at(it->second).graph.at(task_id);
}

ArtifactSnapshot Scheduler::snapshot(const std::string& artifact_id) const {
  std::lock_guard lock(mu_);
  auto it = artifacts_.find(artifact_id);
  if (it == artifacts_.end()) throw Error(ErrorCode::UnknownArtifact, artifact_id);
  ArtifactSnapshot s{artifact_id, it->second.status, it->second.reason, {}};
  for (const auto& id : it->second.graph.order) s.tasks.push_back(it->second.graph.at(id));
  return s;
}

std::vector<std::string> Scheduler::artifacts() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : artifacts_) out.push_back(id);
  return out;
}

std::size_t Scheduler::total_tasks() const {
  std::lock_guard lock(mu_);
  return task_index_.size();
}

std::size_t Scheduler::outbox_size(const Fingerprint& node) const {
  std::lock_guard lock(mu_);
  auto it = nodes_.find(node);
  return it == nodes_.end() ? 0 : it->second.outbox.size();
}

}  // namespace fleet

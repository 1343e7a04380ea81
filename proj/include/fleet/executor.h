#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fleet/model.h"
#include "fleet/planner.h"

namespace fleet {

/// Everything a task may touch on the executing node.
struct TaskContext {
  Fingerprint self;
  std::span<const DataSource> data_sources;
  const InstructionRegistry* registry = nullptr;
  // Collected outputs of the task's dependencies, by resource name.
  NamedBytes inputs;
  // Polled between steps; a true result stops the task.
  std::function<bool()> cancelled;
};

struct TaskResult {
  TaskStatus status = TaskStatus::Completed;
  NamedBytes resources;
  std::string reason;
};

// Runs the task's block locally. Failures, including instructions missing
// from the registry, come back as FAILED with a reason rather than throwing.
TaskResult run_task(const Task& task, const TaskContext& ctx);

}  // namespace fleet

#pragma once

#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fleet/error.h"
#include "fleet/model.h"

namespace fleet {

/// Rejection at submission time. `kind()` names the first offending
/// instruction kind, or "empty" for an empty pipeline.
class ValidationError : public Error {
 public:
  ValidationError(std::string kind, const std::string& detail)
      : Error(ErrorCode::ValidationError, kind + ": " + detail),
        kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

enum class InstructionRole {
  Block,        // top-level Parallel/Finalize
  ParallelStep, // allowed inside a Parallel block
  FinalizeStep, // allowed inside a Finalize block
  Transformer,  // allowed inside a TrainTest query
};

using NamedBytes = std::vector<std::pair<std::string, Bytes>>;

// Execution entry point for instructions registered through the plugin
// hook. Receives the opaque instruction and the collected inputs of the
// task, returns named resources.
using PluginStep =
    std::function<NamedBytes(const Opaque& instruction, const NamedBytes& inputs)>;

struct InstructionDescriptor {
  std::string kind;
  InstructionRole role;
  PluginStep plugin;  // empty for built-ins
};

/// Whitelist of instruction kinds a node accepts. Built before the node
/// starts and not modified afterwards.
class InstructionRegistry {
 public:
  // Exactly the built-in kinds: parallel, finalize, train_test, train,
  // collect, aggregation, federated_splitter.
  static InstructionRegistry defaults();

  void register_plugin(std::string kind, InstructionRole role, PluginStep step);

  const InstructionDescriptor* find(std::string_view kind) const;
  bool contains(std::string_view kind) const { return find(kind) != nullptr; }
  std::vector<std::string> kinds() const;

 private:
  std::map<std::string, InstructionDescriptor, std::less<>> entries_;
};

void validate(const Artifact& artifact, const InstructionRegistry& registry);
void validate(const std::vector<Instruction>& instructions,
              const InstructionRegistry& registry);

/// What the planner needs to know about a node: identity, reachability and
/// the metadata of the data sources it holds.
struct NodeDescriptor {
  Fingerprint fingerprint;
  NodeMode mode = NodeMode::Default;
  std::vector<DataSource> data_sources;
};

// Sorted, deduplicated holders of at least one source tagged `project_code`.
// Throws NoDataHolders.
std::vector<Fingerprint> involved_nodes(std::string_view project_code,
                                        std::span<const NodeDescriptor> nodes);

struct TaskGraph {
  std::string artifact_id;
  std::map<std::string, Task> tasks;
  // Task ids in creation order.
  std::vector<std::string> order;

  const Task& at(const std::string& task_id) const;
  Task& at(const std::string& task_id);
  std::size_t size() const { return tasks.size(); }
};

// Tasks of every Parallel block run on every involved node; each Finalize
// block is a single task on `self`. Blocks chain in list order.
TaskGraph compile(const Artifact& artifact, std::span<const NodeDescriptor> nodes,
                  const Fingerprint& self);

std::set<std::string> ready_set(const TaskGraph& graph);

// Throws InvariantViolation on a cycle or a dangling dependency.
std::vector<std::string> topological_order(const TaskGraph& graph);

}  // namespace fleet

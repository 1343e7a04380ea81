#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "fleet/encoding.h"

namespace fleet {

// Fingerprints are 64 lowercase hex chars; see identity.h.
using Fingerprint = std::string;

/// An instruction kind this build does not know. The original document is
/// kept verbatim (as canonical JSON) so the whitelist can reject it later
/// with a precise error.
struct Opaque {
  std::string kind;
  std::string raw;
  friend bool operator==(const Opaque&, const Opaque&) = default;
};

struct FederatedSplitter {
  std::uint64_t random_state = 0;
  double test_percentage = 0.2;
  std::string label;
  friend bool operator==(const FederatedSplitter&,
                         const FederatedSplitter&) = default;
};

using Transformer = std::variant<FederatedSplitter, Opaque>;

struct Query {
  std::vector<Transformer> transformers;
  friend bool operator==(const Query&, const Query&) = default;
};

enum class ModelKind { RandomForest };
enum class Strategy { Merge };

struct ModelSpec {
  ModelKind kind = ModelKind::RandomForest;
  std::uint32_t n_estimators = 10;
  std::uint32_t max_depth = 5;
  std::uint64_t random_state = 0;
  Strategy strategy = Strategy::Merge;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct Instruction;

struct Parallel {
  std::vector<Instruction> steps;
  friend bool operator==(const Parallel&, const Parallel&) = default;
};

struct Finalize {
  std::vector<Instruction> steps;
  friend bool operator==(const Finalize&, const Finalize&) = default;
};

struct TrainTest {
  Query query;
  ModelSpec model;
  friend bool operator==(const TrainTest&, const TrainTest&) = default;
};

struct Train {
  ModelSpec model;
  friend bool operator==(const Train&, const Train&) = default;
};

struct Collect {
  friend bool operator==(const Collect&, const Collect&) = default;
};

struct Aggregation {
  Strategy strategy = Strategy::Merge;
  friend bool operator==(const Aggregation&, const Aggregation&) = default;
};

struct Instruction {
  using Body =
      std::variant<Parallel, Finalize, TrainTest, Train, Collect, Aggregation,
                   Opaque>;
  Body body;

  template <class T>
    requires(!std::is_same_v<std::remove_cvref_t<T>, Instruction> &&
             std::is_constructible_v<Body, T>)
  Instruction(T value) : body(std::move(value)) {}  // NOLINT(implicit)
  Instruction() : body(Collect{}) {}

  template <class T>
  bool is() const { return std::holds_alternative<T>(body); }
  template <class T>
  const T& as() const { return std::get<T>(body); }

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

// Wire tag of an instruction ("parallel", "train_test", ...), or the
// preserved tag of an Opaque.
std::string_view instruction_kind(const Instruction& ins);
std::string_view transformer_kind(const Transformer& t);

struct Artifact {
  std::string artifact_id;
  std::string project_code;
  std::vector<Instruction> instructions;
  Fingerprint submitted_by;
  friend bool operator==(const Artifact&, const Artifact&) = default;
};

enum class TaskStatus { Created, Eligible, Running, Completed, Failed, Cancelled };

std::string_view to_string(TaskStatus s);
TaskStatus task_status_from_string(std::string_view s);

bool is_terminal(TaskStatus s);
bool is_legal_transition(TaskStatus from, TaskStatus to);
// Throws IllegalTransition when the edge is not allowed.
void check_transition(TaskStatus from, TaskStatus to);

struct Task {
  std::string task_id;
  std::string artifact_id;
  std::string project_code;
  // The Parallel or Finalize block this task executes.
  Instruction instruction;
  Fingerprint assigned_node;
  // Node that schedules this task and receives its reports.
  Fingerprint scheduler;
  std::set<std::string> depends_on;
  TaskStatus status = TaskStatus::Created;
  std::vector<std::string> produced_resources;
  // Resources of completed dependencies, filled in at delivery.
  std::vector<std::string> input_resources;
  std::string reason;
  friend bool operator==(const Task&, const Task&) = default;
};

struct Resource {
  std::string resource_id;
  std::string artifact_id;
  std::string task_id;
  std::string name;
  Bytes bytes;
  std::uint64_t created_seq = 0;
  friend bool operator==(const Resource&, const Resource&) = default;
};

enum class NodeMode { Default, Client };

std::string_view to_string(NodeMode m);
NodeMode node_mode_from_string(std::string_view s);

struct DataSourceRef {
  Fingerprint node;
  std::string data_source_id;
  friend auto operator<=>(const DataSourceRef&, const DataSourceRef&) = default;
};

struct Project {
  std::string code;
  std::string name;
  std::vector<DataSourceRef> data_source_refs;
  friend bool operator==(const Project&, const Project&) = default;
};

enum class DataSourceKind { Csv };

struct DataSource {
  std::string data_source_id;
  std::string path;
  DataSourceKind kind = DataSourceKind::Csv;
  std::vector<std::string> columns;
  std::set<std::string> project_codes;
  friend bool operator==(const DataSource&, const DataSource&) = default;
};

// Canonical JSON: sorted keys, no insignificant whitespace, shortest
// round-trip floats. Equal values give identical bytes.
std::string canonical_serialize(const Instruction& v);
std::string canonical_serialize(const std::vector<Instruction>& v);
std::string canonical_serialize(const Artifact& v);
std::string canonical_serialize(const Task& v);
std::string canonical_serialize(const Resource& v);
std::string canonical_serialize(const Project& v);
std::string canonical_serialize(const DataSource& v);

// Throws MalformedDocument or InvariantViolation.
template <class T>
T canonical_deserialize(std::string_view text);

}  // namespace fleet

#include <algorithm>
#include <cmath>

#include "fleet/error.h"
#include "fleet/json.h"
#include "fleet/model.h"

namespace fleet {
namespace {

std::uint64_t get_uint(const Json& j, std::string_view key) {
  const Json& v = require(j, key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                 v.get<std::int64_t>() < 0)) {
    throw Error(ErrorCode::MalformedDocument,
                "field '" + std::string(key) + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::string get_string(const Json& j, std::string_view key) {
  const Json& v = require(j, key);
  if (!v.is_string()) {
    throw Error(ErrorCode::MalformedDocument,
                "field '" + std::string(key) + "' must be a string");
  }
  return v.get<std::string>();
}

const Json& get_array(const Json& j, std::string_view key) {
  const Json& v = require(j, key);
  if (!v.is_array()) {
    throw Error(ErrorCode::MalformedDocument,
                "field '" + std::string(key) + "' must be an array");
  }
  return v;
}

std::string_view strategy_name(Strategy) { return "merge"; }

Strategy strategy_from(const std::string& s) {
  if (s == "merge") return Strategy::Merge;
  throw Error(ErrorCode::InvariantViolation, "unknown strategy '" + s + "'");
}

void steps_from(const Json& j, std::vector<Instruction>& out) {
  for (const Json& step : get_array(j, "steps")) {
    out.push_back(step.get<Instruction>());
  }
}

Json steps_to(const std::vector<Instruction>& steps) {
  Json arr = Json::array();
  for (const auto& s : steps) arr.push_back(s);
  return arr;
}

Opaque make_opaque(const Json& j) {
  return Opaque{j.at("kind").get<std::string>(), canonical_dump(j)};
}

Json transformer_to_json(const Transformer& t) {
  if (const auto* s = std::get_if<FederatedSplitter>(&t)) {
    return Json{{"kind", "federated_splitter"},
                {"label", s->label},
                {"random_state", s->random_state},
                {"test_percentage", s->test_percentage}};
  }
  return parse_json(std::get<Opaque>(t).raw);
}

Transformer transformer_from_json(const Json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::MalformedDocument, "transformer must be an object");
  }
  const std::string kind = get_string(j, "kind");
  if (kind != "federated_splitter") return make_opaque(j);
  FederatedSplitter s;
  s.random_state = get_uint(j, "random_state");
  const Json& pct = require(j, "test_percentage");
  if (!pct.is_number()) {
    throw Error(ErrorCode::MalformedDocument, "test_percentage must be a number");
  }
  s.test_percentage = pct.get<double>();
  s.label = get_string(j, "label");
  if (!(s.test_percentage > 0.0 && s.test_percentage < 1.0)) {
    throw Error(ErrorCode::InvariantViolation,
                "test_percentage must lie in (0, 1)");
  }
  if (s.label.empty()) {
    throw Error(ErrorCode::InvariantViolation, "label must be non-empty");
  }
  return s;
}

const char* status_names[] = {"CREATED",   "ELIGIBLE", "RUNNING",
                              "COMPLETED", "FAILED",   "CANCELLED"};

template <class T>
std::string serialize_via_json(const T& v) {
  Json j = v;
  return canonical_dump(j);
}

}  // namespace

std::string canonical_dump(const Json& j) {
  return j.dump(-1, ' ', false, Json::error_handler_t::strict);
}

Json parse_json(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
}

const Json& require(const Json& j, std::string_view key) {
  if (!j.is_object()) {
    throw Error(ErrorCode::MalformedDocument, "expected a JSON object");
  }
  auto it = j.find(key);
  if (it == j.end()) {
    throw Error(ErrorCode::MalformedDocument,
                "missing field '" + std::string(key) + "'");
  }
  return *it;
}

std::string_view instruction_kind(const Instruction& ins) {
  return std::visit(
      [](const auto& v) -> std::string_view {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Parallel>) return "parallel";
        if constexpr (std::is_same_v<T, Finalize>) return "finalize";
        if constexpr (std::is_same_v<T, TrainTest>) return "train_test";
        if constexpr (std::is_same_v<T, Train>) return "train";
        if constexpr (std::is_same_v<T, Collect>) return "collect";
        if constexpr (std::is_same_v<T, Aggregation>) return "aggregation";
        if constexpr (std::is_same_v<T, Opaque>) return v.kind;
      },
      ins.body);
}

std::string_view transformer_kind(const Transformer& t) {
  if (const auto* o = std::get_if<Opaque>(&t)) return o->kind;
  return "federated_splitter";
}

std::string_view to_string(TaskStatus s) {
  return status_names[static_cast<int>(s)];
}

TaskStatus task_status_from_string(std::string_view s) {
  for (int i = 0; i < 6; ++i) {
    if (s == status_names[i]) return static_cast<TaskStatus>(i);
  }
  throw Error(ErrorCode::MalformedDocument,
              "unknown task status '" + std::string(s) + "'");
}

std::string_view to_string(NodeMode m) {
  return m == NodeMode::Default ? "default" : "client";
}

NodeMode node_mode_from_string(std::string_view s) {
  if (s == "default") return NodeMode::Default;
  if (s == "client") return NodeMode::Client;
  throw Error(ErrorCode::MalformedDocument, "unknown node mode '" + std::string(s) + "'");
}

bool is_terminal(TaskStatus s) {
  return s == TaskStatus::Completed || s == TaskStatus::Failed ||
         s == TaskStatus::Cancelled;
}

bool is_legal_transition(TaskStatus from, TaskStatus to) {
  using enum TaskStatus;
  switch (from) {
    case Created:
      return to == Eligible || to == Cancelled;
    case Eligible:
      return to == Running || to == Cancelled;
    case Running:
      return to == Completed || to == Failed;
    default:
      return false;
  }
}

void check_transition(TaskStatus from, TaskStatus to) {
  if (!is_legal_transition(from, to)) {
    throw Error(ErrorCode::IllegalTransition,
                std::string(to_string(from)) + " -> " + std::string(to_string(to)));
  }
}

// --- JSON bindings -------------------------------------------------------

void to_json(Json& j, const ModelSpec& v) {
  j = Json{{"kind", "random_forest"},
           {"max_depth", v.max_depth},
           {"n_estimators", v.n_estimators},
           {"random_state", v.random_state},
           {"strategy", strategy_name(v.strategy)}};
}

void from_json(const Json& j, ModelSpec& v) {
  const std::string kind = get_string(j, "kind");
  if (kind != "random_forest") {
    throw Error(ErrorCode::InvariantViolation, "unknown model kind '" + kind + "'");
  }
  const std::uint64_t n = get_uint(j, "n_estimators");
  const std::uint64_t depth = get_uint(j, "max_depth");
  if (n < 1 || n > 100000) {
    throw Error(ErrorCode::InvariantViolation, "n_estimators must be >= 1");
  }
  if (depth < 1 || depth > 1000) {
    throw Error(ErrorCode::InvariantViolation, "max_depth must be >= 1");
  }
  v.kind = ModelKind::RandomForest;
  v.n_estimators = static_cast<std::uint32_t>(n);
  v.max_depth = static_cast<std::uint32_t>(depth);
  v.random_state = get_uint(j, "random_state");
  v.strategy = strategy_from(get_string(j, "strategy"));
}

void to_json(Json& j, const Query& v) {
  Json arr = Json::array();
  for (const auto& t : v.transformers) arr.push_back(transformer_to_json(t));
  j = Json{{"transformers", std::move(arr)}};
}

void from_json(const Json& j, Query& v) {
  v.transformers.clear();
  for (const Json& t : get_array(j, "transformers")) {
    v.transformers.push_back(transformer_from_json(t));
  }
}

void to_json(Json& j, const Instruction& v) {
  std::visit(
      [&j](const auto& ins) {
        using T = std::decay_t<decltype(ins)>;
        if constexpr (std::is_same_v<T, Parallel>) {
          j = Json{{"kind", "parallel"}, {"steps", steps_to(ins.steps)}};
        } else if constexpr (std::is_same_v<T, Finalize>) {
          j = Json{{"kind", "finalize"}, {"steps", steps_to(ins.steps)}};
        } else if constexpr (std::is_same_v<T, TrainTest>) {
          j = Json{{"kind", "train_test"}, {"model", ins.model}, {"query", ins.query}};
        } else if constexpr (std::is_same_v<T, Train>) {
          j = Json{{"kind", "train"}, {"model", ins.model}};
        } else if constexpr (std::is_same_v<T, Collect>) {
          j = Json{{"kind", "collect"}};
        } else if constexpr (std::is_same_v<T, Aggregation>) {
          j = Json{{"kind", "aggregation"}, {"strategy", strategy_name(ins.strategy)}};
        } else {
          j = parse_json(ins.raw);
        }
      },
      v.body);
}

void from_json(const Json& j, Instruction& v) {
  if (!j.is_object()) {
    throw Error(ErrorCode::MalformedDocument, "instruction must be an object");
  }
  const std::string kind = get_string(j, "kind");
  if (kind == "parallel") {
    Parallel p;
    steps_from(j, p.steps);
    v = p;
  } else if (kind == "finalize") {
    Finalize f;
    steps_from(j, f.steps);
    v = f;
  } else if (kind == "train_test") {
    TrainTest t;
    const Json& query = require(j, "query");
    const Json& model = require(j, "model");
    t.query = query.get<Query>();
    t.model = model.get<ModelSpec>();
    v = t;
  } else if (kind == "train") {
    v = Train{require(j, "model").get<ModelSpec>()};
  } else if (kind == "collect") {
    v = Collect{};
  } else if (kind == "aggregation") {
    v = Aggregation{strategy_from(get_string(j, "strategy"))};
  } else {
    v = make_opaque(j);
  }
}

void to_json(Json& j, const Artifact& v) {
  j = Json{{"artifact_id", v.artifact_id},
           {"instructions", steps_to(v.instructions)},
           {"project_code", v.project_code},
           {"submitted_by", v.submitted_by}};
}

void from_json(const Json& j, Artifact& v) {
  v.artifact_id = get_string(j, "artifact_id");
  v.project_code = get_string(j, "project_code");
  v.submitted_by = get_string(j, "submitted_by");
  v.instructions.clear();
  for (const Json& i : get_array(j, "instructions")) {
    v.instructions.push_back(i.get<Instruction>());
  }
  if (!v.artifact_id.empty() && !is_hex_id(v.artifact_id)) {
    throw Error(ErrorCode::InvariantViolation, "artifact_id must be 32 hex chars");
  }
}

void to_json(Json& j, const Task& v) {
  j = Json{{"artifact_id", v.artifact_id},
           {"assigned_node", v.assigned_node},
           {"depends_on", v.depends_on},
           {"input_resources", v.input_resources},
           {"instruction", v.instruction},
           {"produced_resources", v.produced_resources},
           {"project_code", v.project_code},
           {"reason", v.reason},
           {"scheduler", v.scheduler},
           {"status", to_string(v.status)},
           {"task_id", v.task_id}};
}

void from_json(const Json& j, Task& v) {
  v.task_id = get_string(j, "task_id");
  v.artifact_id = get_string(j, "artifact_id");
  v.project_code = get_string(j, "project_code");
  v.instruction = require(j, "instruction").get<Instruction>();
  v.assigned_node = get_string(j, "assigned_node");
  v.scheduler = get_string(j, "scheduler");
  v.depends_on = require_as<std::set<std::string>>(j, "depends_on");
  v.status = task_status_from_string(get_string(j, "status"));
  v.produced_resources = require_as<std::vector<std::string>>(j, "produced_resources");
  v.input_resources = require_as<std::vector<std::string>>(j, "input_resources");
  v.reason = get_string(j, "reason");
}

void to_json(Json& j, const Resource& v) {
  j = Json{{"artifact_id", v.artifact_id},
           {"bytes", base64_encode(v.bytes)},
           {"created_seq", v.created_seq},
           {"name", v.name},
           {"resource_id", v.resource_id},
           {"task_id", v.task_id}};
}

void from_json(const Json& j, Resource& v) {
  v.resource_id = get_string(j, "resource_id");
  v.artifact_id = get_string(j, "artifact_id");
  v.task_id = get_string(j, "task_id");
  v.name = get_string(j, "name");
  v.bytes = base64_decode(get_string(j, "bytes"));
  v.created_seq = get_uint(j, "created_seq");
}

void to_json(Json& j, const DataSourceRef& v) {
  j = Json{{"data_source_id", v.data_source_id}, {"node", v.node}};
}

void from_json(const Json& j, DataSourceRef& v) {
  v.data_source_id = get_string(j, "data_source_id");
  v.node = get_string(j, "node");
}

void to_json(Json& j, const Project& v) {
  j = Json{{"code", v.code}, {"data_source_refs", v.data_source_refs}, {"name", v.name}};
}

void from_json(const Json& j, Project& v) {
  v.code = get_string(j, "code");
  v.name = get_string(j, "name");
  v.data_source_refs.clear();
  for (const Json& r : get_array(j, "data_source_refs")) {
    v.data_source_refs.push_back(r.get<DataSourceRef>());
  }
  if (v.code.empty()) {
    throw Error(ErrorCode::InvariantViolation, "project code must be non-empty");
  }
}

void to_json(Json& j, const DataSource& v) {
  j = Json{{"columns", v.columns},
           {"data_source_id", v.data_source_id},
           {"kind", "csv"},
           {"path", v.path},
           {"project_codes", v.project_codes}};
}

void from_json(const Json& j, DataSource& v) {
  v.data_source_id = get_string(j, "data_source_id");
  v.path = get_string(j, "path");
  if (get_string(j, "kind") != "csv") {
    throw Error(ErrorCode::InvariantViolation, "only csv data sources are supported");
  }
  v.kind = DataSourceKind::Csv;
  v.columns = require_as<std::vector<std::string>>(j, "columns");
  v.project_codes = require_as<std::set<std::string>>(j, "project_codes");
}

// --- canonical forms -----------------------------------------------------

std::string canonical_serialize(const Instruction& v) { return serialize_via_json(v); }
std::string canonical_serialize(const std::vector<Instruction>& v) {
  return canonical_dump(steps_to(v));
}
std::string canonical_serialize(const Artifact& v) { return serialize_via_json(v); }
std::string canonical_serialize(const Task& v) { return serialize_via_json(v); }
std::string canonical_serialize(const Resource& v) { return serialize_via_json(v); }
std::string canonical_serialize(const Project& v) { return serialize_via_json(v); }
std::string canonical_serialize(const DataSource& v) { return serialize_via_json(v); }

template <class T>
T canonical_deserialize(std::string_view text) {
  Json j = parse_json(text);
  try {
    if constexpr (std::is_same_v<T, std::vector<Instruction>>) {
      if (!j.is_array()) {
        throw Error(ErrorCode::MalformedDocument, "expected an instruction array");
      }
      T out;
      for (const Json& i : j) out.push_back(i.get<Instruction>());
      return out;
    } else {
      return j.get<T>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
}

template Instruction canonical_deserialize<Instruction>(std::string_view);
template std::vector<Instruction> canonical_deserialize<std::vector<Instruction>>(
    std::string_view);
template Artifact canonical_deserialize<Artifact>(std::string_view);
template Task canonical_deserialize<Task>(std::string_view);
template Resource canonical_deserialize<Resource>(std::string_view);
template Project canonical_deserialize<Project>(std::string_view);
template DataSource canonical_deserialize<DataSource>(std::string_view);

}  // namespace fleet

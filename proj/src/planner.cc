#include "fleet/planner.h"

#include <algorithm>
#include <deque>

namespace fleet {
namespace {

void check_model(const ModelSpec& m, std::string_view kind) {
  if (m.n_estimators < 1) {
    throw ValidationError(std::string(kind), "n_estimators must be >= 1");
  }
  if (m.max_depth < 1) {
    throw ValidationError(std::string(kind), "max_depth must be >= 1");
  }
}

void check_query(const Query& q, const InstructionRegistry& registry) {
  for (const auto& t : q.transformers) {
    const std::string kind(transformer_kind(t));
    const auto* desc = registry.find(kind);
    if (desc == nullptr) {
      throw ValidationError(kind, "not a registered transformer");
    }
    if (desc->role != InstructionRole::Transformer) {
      throw ValidationError(kind, "not usable as a query transformer");
    }
    if (const auto* s = std::get_if<FederatedSplitter>(&t)) {
      if (!(s->test_percentage > 0.0 && s->test_percentage < 1.0)) {
        throw ValidationError(kind, "test_percentage must lie in (0, 1)");
      }
      if (s->label.empty()) throw ValidationError(kind, "label must be non-empty");
    }
  }
}

void check_step(const Instruction& step, InstructionRole expected,
                const InstructionRegistry& registry) {
  const std::string kind(instruction_kind(step));
  const auto* desc = registry.find(kind);
  if (desc == nullptr) throw ValidationError(kind, "not a registered instruction");
  if (desc->role != expected) {
    throw ValidationError(kind, "not allowed at this position");
  }
  if (const auto* tt = std::get_if<TrainTest>(&step.body)) {
    check_model(tt->model, kind);
    check_query(tt->query, registry);
  } else if (const auto* t = std::get_if<Train>(&step.body)) {
    check_model(t->model, kind);
  }
}

void check_parallel(const Parallel& block, const InstructionRegistry& registry) {
  bool trains = false;
  for (std::size_t i = 0; i < block.steps.size(); ++i) {
    const Instruction& step = block.steps[i];
    check_step(step, InstructionRole::ParallelStep, registry);
    if (step.is<TrainTest>() || step.is<Train>()) trains = true;
    if (step.is<Collect>() && i + 1 != block.steps.size()) {
      throw ValidationError("collect", "collect must be the last step of its block");
    }
  }
  if (trains && !block.steps.back().is<Collect>()) {
    throw ValidationError("collect", "a training parallel block must end with collect");
  }
}

}  // namespace

InstructionRegistry InstructionRegistry::defaults() {
  InstructionRegistry r;
  auto add = [&r](std::string kind, InstructionRole role) {
    r.entries_.emplace(kind, InstructionDescriptor{kind, role, {}});
  };
  add("parallel", InstructionRole::Block);
  add("finalize", InstructionRole::Block);
  add("train_test", InstructionRole::ParallelStep);
  add("train", InstructionRole::ParallelStep);
  add("collect", InstructionRole::ParallelStep);
  add("aggregation", InstructionRole::FinalizeStep);
  add("federated_splitter", InstructionRole::Transformer);
  return r;
}

void InstructionRegistry::register_plugin(std::string kind, InstructionRole role,
                                          PluginStep step) {
  if (role == InstructionRole::Block || role == InstructionRole::Transformer) {
    throw Error(ErrorCode::InvariantViolation,
                "plugins may only register parallel or finalize steps");
  }
  if (entries_.contains(kind)) {
    throw Error(ErrorCode::InvariantViolation, "instruction '" + kind + "' already registered");
  }
  if (!step) throw Error(ErrorCode::InvariantViolation, "plugin needs an entry point");
  entries_.emplace(kind, InstructionDescriptor{kind, role, std::move(step)});
}

const InstructionDescriptor* InstructionRegistry::find(std::string_view kind) const {
  auto it = entries_.find(kind);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> InstructionRegistry::kinds() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

void validate(const std::vector<Instruction>& instructions,
              const InstructionRegistry& registry) {
  if (instructions.empty()) {
    throw ValidationError("empty", "pipeline has no instructions");
  }
  for (std::size_t i = 0; i < instructions.size(); ++i) {
    const Instruction& top = instructions[i];
    const std::string kind(instruction_kind(top));
    const auto* desc = registry.find(kind);
    if (desc == nullptr) throw ValidationError(kind, "not a registered instruction");
    if (desc->role != InstructionRole::Block) {
      throw ValidationError(kind, "top level must be parallel or finalize blocks");
    }
    if (const auto* p = std::get_if<Parallel>(&top.body)) {
      if (p->steps.empty()) throw ValidationError(kind, "block has no steps");
      check_parallel(*p, registry);
    } else if (const auto* f = std::get_if<Finalize>(&top.body)) {
      if (f->steps.empty()) throw ValidationError(kind, "block has no steps");
      if (i == 0) throw ValidationError(kind, "finalize needs a preceding block");
      for (const auto& step : f->steps) {
        check_step(step, InstructionRole::FinalizeStep, registry);
      }
    }
  }
}

void validate(const Artifact& artifact, const InstructionRegistry& registry) {
  validate(artifact.instructions, registry);
}

std::vector<Fingerprint> involved_nodes(std::string_view project_code,
                                        std::span<const NodeDescriptor> nodes) {
  std::vector<Fingerprint> out;
  for (const auto& node : nodes) {
    const bool holds = std::any_of(
        node.data_sources.begin(), node.data_sources.end(), [&](const DataSource& ds) {
          return ds.project_codes.contains(std::string(project_code));
        });
    if (holds) out.push_back(node.fingerprint);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) {
    throw Error(ErrorCode::NoDataHolders,
                "no node holds data for project '" + std::string(project_code) + "'");
  }
  return out;
}

const Task& TaskGraph::at(const std::string& task_id) const {
  auto it = tasks.find(task_id);
  if (it == tasks.end()) throw Error(ErrorCode::UnknownTask, task_id);
  return it->second;
}

Task& TaskGraph::at(const std::string& task_id) {
  auto it = tasks.find(task_id);
  if (it == tasks.end()) throw Error(ErrorCode::UnknownTask, task_id);
  return it->second;
}

TaskGraph compile(const Artifact& artifact, std::span<const NodeDescriptor> nodes,
                  const Fingerprint& self) {
  const std::vector<Fingerprint> holders = involved_nodes(artifact.project_code, nodes);

  auto self_it = std::find_if(nodes.begin(), nodes.end(),
                              [&](const NodeDescriptor& n) { return n.fingerprint == self; });
  const bool self_reachable = self_it != nodes.end() && self_it->mode == NodeMode::Default;

  TaskGraph graph;
  graph.artifact_id = artifact.artifact_id;
  std::set<std::string> previous;

  auto make_task = [&](const Instruction& block, const Fingerprint& node) {
    Task t;
    t.task_id = new_id();
    t.artifact_id = artifact.artifact_id;
    t.project_code = artifact.project_code;
    t.instruction = block;
    t.assigned_node = node;
    t.scheduler = self;
    t.depends_on = previous;
    graph.order.push_back(t.task_id);
    std::string id = t.task_id;
    graph.tasks.emplace(id, std::move(t));
    return id;
  };

  for (const Instruction& block : artifact.instructions) {
    std::set<std::string> current;
    if (block.is<Parallel>()) {
      for (const auto& holder : holders) current.insert(make_task(block, holder));
    } else if (block.is<Finalize>()) {
      // Finalize consumes inputs produced elsewhere, so it needs a node
      // that other nodes can push to.
      if (!self_reachable) {
        throw Error(ErrorCode::UnassignableTask,
                    "finalize task cannot be assigned to a client-mode node");
      }
      current.insert(make_task(block, self));
    } else {
      throw ValidationError(std::string(instruction_kind(block)),
                            "top level must be parallel or finalize blocks");
    }
    previous = std::move(current);
  }
  return graph;
}

std::set<std::string> ready_set(const TaskGraph& graph) {
  std::set<std::string> out;
  for (const auto& [id, task] : graph.tasks) {
    if (task.status != TaskStatus::Created) continue;
    const bool ready = std::all_of(
        task.depends_on.begin(), task.depends_on.end(), [&](const std::string& dep) {
          auto it = graph.tasks.find(dep);
          return it != graph.tasks.end() && it->second.status == TaskStatus::Completed;
        });
    if (ready) out.insert(id);
  }
  return out;
}

std::vector<std::string> topological_order(const TaskGraph& graph) {
  std::map<std::string, std::size_t> indegree;
  std::map<std::string, std::vector<std::string>> dependents;
  for (const auto& [id, task] : graph.tasks) {
    indegree.try_emplace(id, 0);
    for (const auto& dep : task.depends_on) {
      if (!graph.tasks.contains(dep)) {
        throw Error(ErrorCode::InvariantViolation, "dangling dependency " + dep);
      }
      ++indegree[id];
      dependents[dep].push_back(id);
    }
  }
  std::deque<std::string> frontier;
  for (const auto& [id, deg] : indegree) {
    if (deg == 0) frontier.push_back(id);
  }
  std::vector<std::string> out;
  while (!frontier.empty()) {
    std::string id = frontier.front();
    frontier.pop_front();
    out.push_back(id);
    for (const auto& next : dependents[id]) {
      if (--indegree[next] == 0) frontier.push_back(next);
    }
  }
  if (out.size() != graph.tasks.size()) {
    throw Error(ErrorCode::InvariantViolation, "task graph has a cycle");
  }
  return out;
}

}  // namespace fleet

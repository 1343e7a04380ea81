#include "fleet/executor.h"

#include <algorithm>

#include "fleet/error.h"
#include "fleet/forest.h"
#include "fleet/table.h"

namespace fleet {
namespace {

void put(NamedBytes& out, const std::string& name, Bytes bytes) {
  auto it = std::find_if(out.begin(), out.end(), [&](const auto& kv) { return kv.first == name; });
  if (it != out.end()) {
    it->second = std::move(bytes);
  } else {
    out.emplace_back(name, std::move(bytes));
  }
}

const FederatedSplitter* find_splitter(const Query& q) {
  for (const auto& t : q.transformers) {
    if (const auto* s = std::get_if<FederatedSplitter>(&t)) return s;
  }
  return nullptr;
}

// Without an explicit label the last column is the target.
std::string default_label(std::span<const DataSource> sources, const std::string& code) {
  for (const auto& ds : sources) {
    if (ds.project_codes.contains(code) && !ds.columns.empty()) return ds.columns.back();
  }
  throw Error(ErrorCode::NoLocalData, "no local source for project '" + code + "'");
}

void run_train_test(const Task& task, const TrainTest& step, const TaskContext& ctx,
                    NamedBytes& out) {
  const FederatedSplitter* splitter = find_splitter(step.query);
  const std::string label =
      splitter ? splitter->label : default_label(ctx.data_sources, task.project_code);
  Table table = extract(task.project_code, ctx.data_sources, label);
  Table train = table;
  Table test = table.subset(std::span<const std::size_t>{});
  if (splitter) std::tie(train, test) = split(table, *splitter);
  const Forest forest = train_forest(train, step.model, ctx.self);
  const Metrics metrics = evaluate(forest, test);
  put(out, "model", to_bytes(serialize_forest(forest)));
  put(out, "metrics", to_bytes(serialize_metrics(metrics)));
}

void run_train(const Task& task, const Train& step, const TaskContext& ctx, NamedBytes& out) {
  const std::string label = default_label(ctx.data_sources, task.project_code);
  const Table table = extract(task.project_code, ctx.data_sources, label);
  const Forest forest = train_forest(table, step.model, ctx.self);
  put(out, "model", to_bytes(serialize_forest(forest)));
}

void run_aggregation(const TaskContext& ctx, NamedBytes& out) {
  std::vector<Forest> forests;
  for (const auto& [name, bytes] : ctx.inputs) {
    if (name == "model") forests.push_back(deserialize_forest(to_string(bytes)));
  }
  if (forests.empty()) throw Error(ErrorCode::MissingModel, "no input models to aggregate");
  // Merge order follows the producing nodes' fingerprints.
  std::stable_sort(forests.begin(), forests.end(), [](const Forest& a, const Forest& b) {
    return a.metadata.origins < b.metadata.origins;
  });
  put(out, "model", to_bytes(serialize_forest(aggregate_merge(forests))));
}

void check_registered(const Instruction& ins, const InstructionRegistry& registry) {
  const std::string kind(instruction_kind(ins));
  if (!registry.contains(kind)) {
    throw Error(ErrorCode::UnknownInstruction, "instruction '" + kind + "' is not registered");
  }
  if (const auto* tt = std::get_if<TrainTest>(&ins.body)) {
    for (const auto& t : tt->query.transformers) {
      const std::string tk(transformer_kind(t));
      if (!registry.contains(tk) || std::holds_alternative<Opaque>(t)) {
        throw Error(ErrorCode::UnknownInstruction, "transformer '" + tk + "' is not registered");
      }
    }
  }
}

}  // namespace

TaskResult run_task(const Task& task, const TaskContext& ctx) {
  TaskResult result;
  try {
    const InstructionRegistry fallback = InstructionRegistry::defaults();
    const InstructionRegistry& registry = ctx.registry ? *ctx.registry : fallback;
    check_registered(task.instruction, registry);

    const std::vector<Instruction>* steps = nullptr;
    if (const auto* p = std::get_if<Parallel>(&task.instruction.body)) steps = &p->steps;
    if (const auto* f = std::get_if<Finalize>(&task.instruction.body)) steps = &f->steps;
    if (steps == nullptr) {
      throw Error(ErrorCode::UnknownInstruction, "task payload must be a parallel or finalize block");
    }
    for (const auto& step : *steps) check_registered(step, registry);

    for (const auto& step : *steps) {
      if (ctx.cancelled && ctx.cancelled()) {
        result.status = TaskStatus::Failed;
        result.reason = "cancelled";
        result.resources.clear();
        return result;
      }
      if (const auto* tt = std::get_if<TrainTest>(&step.body)) {
        run_train_test(task, *tt, ctx, result.resources);
      } else if (const auto* tr = std::get_if<Train>(&step.body)) {
        run_train(task, *tr, ctx, result.resources);
      } else if (step.is<Aggregation>()) {
        run_aggregation(ctx, result.resources);
      } else if (const auto* op = std::get_if<Opaque>(&step.body)) {
        const auto* desc = registry.find(op->kind);
        if (desc == nullptr || !desc->plugin) {
          throw Error(ErrorCode::UnknownInstruction, "no executor for '" + op->kind + "'");
        }
        for (auto& [name, bytes] : desc->plugin(*op, ctx.inputs)) {
          put(result.resources, name, std::move(bytes));
        }
      }
      // Collect only marks the outputs as inputs of the next block.
    }
  } catch (const Error& e) {
    result.status = TaskStatus::Failed;
    result.reason = std::string(error_code_name(e.code())) + ": " + e.what();
    result.resources.clear();
  } catch (const std::exception& e) {
    result.status = TaskStatus::Failed;
    result.reason = std::string("Internal: ") + e.what();
    result.resources.clear();
  }
  return result;
}

}  // namespace fleet

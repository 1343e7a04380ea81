#pragma once

// Randomized scheduler runs: random DAGs, random node modes, random
// interleavings of polls and executor reports, optional failure injection.
// Counts violations of the delivery and abort properties.

#include <algorithm>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fleet/scheduler.h"

namespace fleet::testing {

struct PropertyOutcome {
  std::size_t tasks = 0;
  bool injected_failure = false;
  ArtifactStatus final_status = ArtifactStatus::Submitted;
  std::vector<std::string> violations;
};

inline PropertyOutcome run_scheduler_property(std::uint64_t seed, std::size_t max_tasks = 50) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto chance = [&](double p) { return std::bernoulli_distribution(p)(rng); };

  PropertyOutcome out;
  Scheduler scheduler;
  const std::size_t node_count = pick(1, 5);
  std::vector<Fingerprint> nodes;
  std::vector<NodeMode> modes;
  for (std::size_t i = 0; i < node_count; ++i) {
    nodes.push_back(Fingerprint(64, static_cast<char>('a' + i)));
    modes.push_back(chance(0.5) ? NodeMode::Client : NodeMode::Default);
    scheduler.register_node(nodes.back(), modes.back());
  }

  TaskGraph graph;
  graph.artifact_id = new_id();
  const std::size_t n = pick(1, max_tasks);
  const double density = std::uniform_real_distribution<double>(0.0, 0.3)(rng);
  for (std::size_t i = 0; i < n; ++i) {
    Task t;
    t.task_id = new_id();
    t.artifact_id = graph.artifact_id;
    t.instruction = Parallel{{Collect{}}};
    t.assigned_node = nodes[pick(0, node_count - 1)];
    for (std::size_t j = 0; j < i; ++j) {
      if (chance(density)) t.depends_on.insert(graph.order[j]);
    }
    graph.order.push_back(t.task_id);
    graph.tasks.emplace(t.task_id, t);
  }
  out.tasks = n;
  const TaskGraph shape = graph;

  out.injected_failure = chance(0.5);
  const std::size_t fail_after = out.injected_failure ? pick(0, n - 1) : n + 1;

  auto violation = [&](const std::string& what) { out.violations.push_back(what); };
  std::set<std::string> delivered;
  std::vector<std::string> in_flight;  // delivered, not yet terminal
  std::set<std::string> running;
  bool aborted = false;
  std::size_t reports = 0;

  auto on_delivery = [&](const std::string& id) {
    if (aborted) violation("delivery after abort: " + id);
    if (!delivered.insert(id).second) violation("duplicate delivery: " + id);
    for (const auto& dep : shape.at(id).depends_on) {
      if (scheduler.find_task(dep)->status != TaskStatus::Completed) {
        violation("delivered before dependency completed: " + id);
      }
    }
    in_flight.push_back(id);
  };

  auto absorb = [&](const UpdateOutcome& u) {
    for (const auto& intent : u.dispatch) on_delivery(intent.task.task_id);
    if (!u.aborts.empty()) aborted = true;
  };

  for (const auto& intent : scheduler.on_submit(graph)) on_delivery(intent.task.task_id);

  for (std::size_t steps = 0; steps < 40 * n + 200; ++steps) {
    const auto snap = scheduler.snapshot(graph.artifact_id);
    if (snap.status == ArtifactStatus::Completed) break;
    if (snap.status == ArtifactStatus::Aborted && in_flight.empty()) break;

    if (chance(0.3) || in_flight.empty()) {
      const std::size_t k = pick(0, node_count - 1);
      for (const auto& t : scheduler.next_tasks_for(nodes[k], pick(1, 4))) {
        on_delivery(t.task_id);
      }
      if (in_flight.empty()) continue;
    }
    const std::size_t idx = pick(0, in_flight.size() - 1);
    const std::string id = in_flight[idx];
    const TaskStatus current = scheduler.find_task(id)->status;
    if (current == TaskStatus::Cancelled) {
      in_flight.erase(in_flight.begin() + static_cast<long>(idx));
      continue;
    }
    if (!running.contains(id)) {
      absorb(scheduler.on_task_update(id, TaskStatus::Running));
      running.insert(id);
      continue;
    }
    const bool fail = reports++ == fail_after;
    absorb(scheduler.on_task_update(id, fail ? TaskStatus::Failed : TaskStatus::Completed,
                                    {new_id()}, fail ? "injected" : ""));
    if (fail) aborted = true;
    in_flight.erase(in_flight.begin() + static_cast<long>(idx));
  }

  // Polls after the run must not hand out anything once aborted.
  for (const auto& node : nodes) {
    for (const auto& t : scheduler.next_tasks_for(node, 100)) {
      if (aborted) violation("poll after abort returned " + t.task_id);
      on_delivery(t.task_id);
    }
  }

  const auto snap = scheduler.snapshot(graph.artifact_id);
  out.final_status = snap.status;
  std::size_t failed = 0;
  for (const auto& t : snap.tasks) {
    if (t.status == TaskStatus::Failed) ++failed;
  }
  if (failed > 0) {
    if (snap.status != ArtifactStatus::Aborted) violation("failure did not abort");
    for (const auto& t : snap.tasks) {
      if (t.status == TaskStatus::Created || t.status == TaskStatus::Eligible) {
        violation("task left pending after abort: " + t.task_id);
      }
    }
  } else {
    if (snap.status != ArtifactStatus::Completed) violation("failure-free run did not complete");
    if (delivered.size() != n) violation("not every task was delivered");
  }
  return out;
}

}  // namespace fleet::testing

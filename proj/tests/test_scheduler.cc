#include <doctest.h>

#include <fstream>

#include "fleet/json.h"
#include "fleet/scheduler.h"
#include "scheduler_property.h"
#include "support.h"

using namespace fleet;
using namespace fleet::testing;

namespace {

struct Fixture {
  Scheduler scheduler;
  TaskGraph graph;
  std::vector<std::string> ids;

  explicit Fixture(NodeMode holder_mode, Scheduler::Options opts = {})
      : scheduler(std::move(opts)) {
    std::vector<NodeDescriptor> nodes{holder('a', holder_mode), holder('b', holder_mode),
                                      holder('c', holder_mode), bare('e')};
    for (const auto& n : nodes) scheduler.register_node(n.fingerprint, n.mode);
    graph = compile(forest_artifact(), nodes, fp('e'));
    ids = graph.order;
  }

  void complete(const std::string& id) {
    scheduler.on_task_update(id, TaskStatus::Running);
    scheduler.on_task_update(id, TaskStatus::Completed, {"res-" + id});
  }
};

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

}  // namespace

TEST_SUITE("scheduler") {
  TEST_CASE("submit dispatches to default-mode holders") {
    Fixture f(NodeMode::Default);
    const auto intents = f.scheduler.on_submit(f.graph);
    CHECK(intents.size() == 3);
    for (const auto& i : intents) CHECK(i.task.status == TaskStatus::Eligible);
    CHECK(f.scheduler.snapshot(f.graph.artifact_id).status == ArtifactStatus::Running);
    CHECK(code_of([&] { f.scheduler.on_submit(f.graph); }) == ErrorCode::DuplicateArtifact);
  }

  TEST_CASE("submit defers delivery to client-mode holders") {
    Fixture f(NodeMode::Client);
    CHECK(f.scheduler.on_submit(f.graph).empty());
    for (char c : {'a', 'b', 'c'}) CHECK(f.scheduler.outbox_size(fp(c)) == 1);
  }

  TEST_CASE("empty graph completes immediately") {
    Scheduler s;
    TaskGraph g;
    g.artifact_id = new_id();
    CHECK(s.on_submit(g).empty());
    CHECK(s.snapshot(g.artifact_id).status == ArtifactStatus::Completed);
  }

  TEST_CASE("aggregation unlocks only after every holder completes") {
    Fixture f(NodeMode::Default);
    f.scheduler.on_submit(f.graph);
    f.complete(f.ids[0]);
    f.complete(f.ids[1]);
    f.scheduler.on_task_update(f.ids[2], TaskStatus::Running);
    const auto out = f.scheduler.on_task_update(f.ids[2], TaskStatus::Completed, {"r2"});
    REQUIRE(out.dispatch.size() == 1);
    CHECK(out.dispatch[0].task.task_id == f.ids[3]);
    CHECK(out.dispatch[0].node == fp('e'));
    // Inputs are the collected outputs of every dependency.
    CHECK(out.dispatch[0].task.input_resources.size() == 3);
    f.complete(f.ids[3]);
    CHECK(f.scheduler.snapshot(f.graph.artifact_id).status == ArtifactStatus::Completed);
  }

  TEST_CASE("failure aborts and cancels pending work") {
    Fixture f(NodeMode::Default);
    f.scheduler.on_submit(f.graph);
    f.scheduler.on_task_update(f.ids[0], TaskStatus::Running);
    f.scheduler.on_task_update(f.ids[1], TaskStatus::Running);
    const auto out = f.scheduler.on_task_update(f.ids[1], TaskStatus::Failed, {}, "boom");
    CHECK(out.dispatch.empty());
    const auto snap = f.scheduler.snapshot(f.graph.artifact_id);
    CHECK(snap.status == ArtifactStatus::Aborted);
    CHECK(snap.reason.find("boom") != std::string::npos);
    CHECK(f.scheduler.find_task(f.ids[3])->status == TaskStatus::Cancelled);
    CHECK(f.scheduler.find_task(f.ids[2])->status == TaskStatus::Cancelled);
    CHECK(f.scheduler.find_task(f.ids[0])->status == TaskStatus::Running);
    // Nodes a (running) and c (delivered) hear about it.
    std::set<Fingerprint> notified;
    for (const auto& n : out.aborts) notified.insert(n.node);
    CHECK(notified == std::set<Fingerprint>{fp('a'), fp('c')});
    // A still-running task may finish; nothing new is dispatched.
    CHECK(f.scheduler.on_task_update(f.ids[0], TaskStatus::Completed, {"r"}).dispatch.empty());
    CHECK(f.scheduler.find_task(f.ids[0])->status == TaskStatus::Completed);
  }

  TEST_CASE("illegal and unknown updates") {
    Fixture f(NodeMode::Default);
    f.scheduler.on_submit(f.graph);
    f.complete(f.ids[0]);
    CHECK(code_of([&] { f.scheduler.on_task_update(f.ids[0], TaskStatus::Running); }) ==
          ErrorCode::IllegalTransition);
    CHECK(code_of([&] { f.scheduler.on_task_update(f.ids[0], TaskStatus::Completed); }) ==
          ErrorCode::IllegalTransition);
    CHECK(code_of([&] { f.scheduler.on_task_update(f.ids[3], TaskStatus::Running); }) ==
          ErrorCode::IllegalTransition);
    CHECK(code_of([&] { f.scheduler.on_task_update("nope", TaskStatus::Running); }) ==
          ErrorCode::UnknownTask);
    CHECK(code_of([&] { f.scheduler.on_task_update(f.ids[1], TaskStatus::Cancelled); }) ==
          ErrorCode::IllegalTransition);
  }

  TEST_CASE("polling drains the outbox once") {
    Scheduler s;
    s.register_node(fp('a'), NodeMode::Client);
    s.register_node(fp('e'), NodeMode::Default);
    TaskGraph g;
    g.artifact_id = new_id();
    for (int i = 0; i < 2; ++i) {
      Task t;
      t.task_id = new_id();
      t.artifact_id = g.artifact_id;
      t.instruction = Parallel{{Collect{}}};
      t.assigned_node = fp('a');
      g.order.push_back(t.task_id);
      g.tasks.emplace(t.task_id, t);
    }
    s.on_submit(g);
    CHECK(s.next_tasks_for(fp('a'), 10).size() == 2);
    CHECK(s.next_tasks_for(fp('a'), 10).empty());
    CHECK(s.next_tasks_for(fp('e')).empty());
    CHECK(code_of([&] { s.next_tasks_for(fp('q')); }) == ErrorCode::UnknownNode);
  }

  TEST_CASE("poll size is capped") {
    Scheduler s;
    s.register_node(fp('a'), NodeMode::Client);
    TaskGraph g;
    g.artifact_id = new_id();
    for (int i = 0; i < 20; ++i) {
      Task t;
      t.task_id = new_id();
      t.artifact_id = g.artifact_id;
      t.assigned_node = fp('a');
      g.order.push_back(t.task_id);
      g.tasks.emplace(t.task_id, t);
    }
    s.on_submit(g);
    CHECK(s.next_tasks_for(fp('a')).size() == 16);
    CHECK(s.next_tasks_for(fp('a'), 3).size() == 3);
    CHECK(s.next_tasks_for(fp('a')).size() == 1);
  }

  TEST_CASE("silent executors time out and abort the artifact") {
    Scheduler::Options opts;
    opts.task_timeout = std::chrono::seconds(300);
    Fixture f(NodeMode::Default, opts);
    const auto t0 = Scheduler::Clock::now();
    f.scheduler.on_submit(f.graph, t0);
    f.scheduler.on_task_update(f.ids[0], TaskStatus::Running, {}, {}, t0);
    CHECK(f.scheduler.expire(t0 + std::chrono::seconds(299)).aborts.empty());
    const auto out = f.scheduler.expire(t0 + std::chrono::seconds(301));
    CHECK_FALSE(out.aborts.empty());
    const auto snap = f.scheduler.snapshot(f.graph.artifact_id);
    CHECK(snap.status == ArtifactStatus::Aborted);
    const auto failed = std::count_if(snap.tasks.begin(), snap.tasks.end(), [](const Task& t) {
      return t.status == TaskStatus::Failed && t.reason == "timeout";
    });
    CHECK(failed >= 1);
    CHECK(f.scheduler.find_task(f.ids[3])->status == TaskStatus::Cancelled);
  }

  TEST_CASE("queued but undelivered tasks never time out") {
    Scheduler::Options opts;
    opts.task_timeout = std::chrono::milliseconds(1);
    Fixture f(NodeMode::Client, opts);
    const auto t0 = Scheduler::Clock::now();
    f.scheduler.on_submit(f.graph, t0);
    CHECK(f.scheduler.expire(t0 + std::chrono::hours(1)).aborts.empty());
    CHECK(f.scheduler.snapshot(f.graph.artifact_id).status == ArtifactStatus::Running);
  }

  TEST_CASE("client-mode abort notices wait for the next poll") {
    Fixture f(NodeMode::Client);
    f.scheduler.on_submit(f.graph);
    for (char c : {'a', 'b'}) {
      const auto tasks = f.scheduler.next_tasks_for(fp(c));
      REQUIRE(tasks.size() == 1);
      f.scheduler.on_task_update(tasks[0].task_id, TaskStatus::Running);
    }
    f.scheduler.on_task_update(f.ids[0], TaskStatus::Failed, {}, "x");
    CHECK(f.scheduler.take_aborts_for(fp('b')).size() == 1);
    CHECK(f.scheduler.take_aborts_for(fp('b')).empty());
    // c never picked its task up: it is cancelled and dropped from the outbox.
    CHECK(f.scheduler.next_tasks_for(fp('c')).empty());
    CHECK(f.scheduler.take_aborts_for(fp('c')).empty());
  }

  TEST_CASE("event log has one canonical JSON event per line") {
    TempDir dir;
    Scheduler::Options opts;
    opts.event_log = dir.path() / "events.log";
    {
      Fixture f(NodeMode::Default, opts);
      f.scheduler.on_submit(f.graph);
      f.complete(f.ids[0]);
    }
    std::ifstream in(dir.path() / "events.log");
    std::string line;
    std::uint64_t last_seq = 0;
    std::size_t updates = 0;
    while (std::getline(in, line)) {
      const Json j = parse_json(line);
      CHECK(canonical_dump(j) == line);
      const auto seq = j.at("seq").get<std::uint64_t>();
      CHECK(seq > last_seq);
      last_seq = seq;
      if (j.at("event") == "task_update") {
        ++updates;
        CHECK(j.contains("task"));
        CHECK(j.contains("status"));
      }
    }
    CHECK(updates == 5);  // 3 eligible + running + completed
  }

  TEST_CASE("randomized delivery and abort properties (small sample)") {
    std::size_t violations = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const auto r = run_scheduler_property(seed, 25);
      for (const auto& v : r.violations) MESSAGE("seed " << seed << ": " << v);
      violations += r.violations.size();
    }
    CHECK(violations == 0);
  }
}

#include <doctest.h>

#include "fleet/planner.h"
#include "support.h"

using namespace fleet;
using namespace fleet::testing;

namespace {

std::string rejected_kind(const std::vector<Instruction>& plan,
                          const InstructionRegistry& registry = InstructionRegistry::defaults()) {
  try {
    validate(plan, registry);
  } catch (const ValidationError& e) {
    return e.kind();
  }
  return "<accepted>";
}

std::vector<Instruction> plan_from(const std::string& json) {
  return canonical_deserialize<std::vector<Instruction>>(json);
}

std::vector<const Task*> tasks_in_order(const TaskGraph& g) {
  std::vector<const Task*> out;
  for (const auto& id : g.order) out.push_back(&g.at(id));
  return out;
}

}  // namespace

TEST_SUITE("planner") {
  TEST_CASE("default registry is exactly the built-in whitelist") {
    CHECK(InstructionRegistry::defaults().kinds() ==
          std::vector<std::string>{"aggregation", "collect", "federated_splitter", "finalize",
                                   "parallel", "train", "train_test"});
  }

  TEST_CASE("validate accepts the reference pipeline and rejects bad ones") {
    CHECK(rejected_kind(forest_instructions()) == "<accepted>");
    CHECK(rejected_kind({}) == "empty");

    auto with_exfil = forest_instructions();
    std::get<Parallel>(with_exfil[0].body).steps.insert(
        std::get<Parallel>(with_exfil[0].body).steps.begin(), Opaque{"exfiltrate", R"({"kind":"exfiltrate"})"});
    CHECK(rejected_kind(with_exfil) == "exfiltrate");

    CHECK(rejected_kind(plan_from(R"([{"kind":"exfiltrate"}])")) == "exfiltrate");
    CHECK(rejected_kind(plan_from(R"([{"kind":"collect"}])")) == "collect");
    CHECK(rejected_kind(plan_from(
              R"([{"kind":"parallel","steps":[{"kind":"parallel","steps":[{"kind":"collect"}]}]}])")) ==
          "parallel");
    CHECK(rejected_kind(plan_from(
              R"([{"kind":"parallel","steps":[{"kind":"train","model":{"kind":"random_forest","max_depth":2,"n_estimators":1,"random_state":1,"strategy":"merge"}}]}])")) ==
          "collect");
    CHECK(rejected_kind(plan_from(
              R"([{"kind":"finalize","steps":[{"kind":"aggregation","strategy":"merge"}]}])")) ==
          "finalize");
    CHECK(rejected_kind(plan_from(
              R"([{"kind":"parallel","steps":[{"kind":"aggregation","strategy":"merge"}]}])")) ==
          "aggregation");
    CHECK(rejected_kind(plan_from(R"([{"kind":"parallel","steps":[]}])")) == "parallel");
    CHECK(rejected_kind(plan_from(
              R"([{"kind":"parallel","steps":[{"kind":"train_test","model":{"kind":"random_forest","max_depth":2,"n_estimators":1,"random_state":1,"strategy":"merge"},"query":{"transformers":[{"kind":"scaler"}]}},{"kind":"collect"}]}])")) ==
          "scaler");
    // A transformer kind is not an instruction on its own.
    CHECK(rejected_kind(plan_from(
              R"([{"kind":"parallel","steps":[{"kind":"federated_splitter"},{"kind":"collect"}]}])")) ==
          "federated_splitter");
  }

  TEST_CASE("plugins extend the whitelist for step positions only") {
    auto registry = InstructionRegistry::defaults();
    registry.register_plugin("row_count", InstructionRole::ParallelStep,
                             [](const Opaque&, const NamedBytes&) { return NamedBytes{}; });
    CHECK(rejected_kind(plan_from(
                            R"([{"kind":"parallel","steps":[{"kind":"row_count"},{"kind":"collect"}]}])"),
                        registry) == "<accepted>");
    CHECK_THROWS_AS(registry.register_plugin("blk", InstructionRole::Block,
                                             [](const Opaque&, const NamedBytes&) {
                                               return NamedBytes{};
                                             }),
                    Error);
    CHECK_THROWS_AS(registry.register_plugin("train", InstructionRole::ParallelStep,
                                             [](const Opaque&, const NamedBytes&) {
                                               return NamedBytes{};
                                             }),
                    Error);
  }

  TEST_CASE("involved_nodes") {
    std::vector<NodeDescriptor> nodes{holder('c'), holder('a'), bare('e'), holder('b')};
    CHECK(involved_nodes("p1", nodes) == std::vector<Fingerprint>{fp('a'), fp('b'), fp('c')});
    CHECK_THROWS_WITH_AS(involved_nodes("p9", nodes), doctest::Contains("p9"), Error);

    NodeDescriptor two = bare('d');
    two.data_sources = {source("s1", {"p2"}), source("s2", {"p2", "p3"})};
    std::vector<NodeDescriptor> one{two, holder('a')};
    CHECK(involved_nodes("p2", one) == std::vector<Fingerprint>{fp('d')});
    CHECK(involved_nodes("p3", one) == std::vector<Fingerprint>{fp('d')});
  }

  TEST_CASE("compile the reference pipeline over three holders") {
    std::vector<NodeDescriptor> nodes{holder('a'), holder('b'), holder('c'), bare('e'), bare('f')};
    const Artifact artifact = forest_artifact();
    const TaskGraph g = compile(artifact, nodes, fp('e'));
    REQUIRE(g.size() == 4);
    const auto tasks = tasks_in_order(g);
    std::set<std::string> parallel_ids;
    for (int i = 0; i < 3; ++i) {
      CHECK(tasks[i]->assigned_node == fp(static_cast<char>('a' + i)));
      CHECK(tasks[i]->depends_on.empty());
      CHECK(tasks[i]->instruction.is<Parallel>());
      CHECK(tasks[i]->scheduler == fp('e'));
      CHECK(tasks[i]->status == TaskStatus::Created);
      parallel_ids.insert(tasks[i]->task_id);
    }
    CHECK(tasks[3]->assigned_node == fp('e'));
    CHECK(tasks[3]->instruction.is<Finalize>());
    CHECK(tasks[3]->depends_on == parallel_ids);
    CHECK(topological_order(g).size() == 4);
  }

  TEST_CASE("degenerate and chained pipelines") {
    std::vector<NodeDescriptor> one{holder('a'), bare('e')};
    CHECK(compile(forest_artifact(), one, fp('e')).size() == 2);

    auto artifact = forest_artifact();
    artifact.instructions.insert(artifact.instructions.begin(), artifact.instructions[0]);
    std::vector<NodeDescriptor> two{holder('a'), holder('b'), bare('e')};
    const TaskGraph g = compile(artifact, two, fp('e'));
    REQUIRE(g.size() == 5);
    const auto tasks = tasks_in_order(g);
    const std::set<std::string> first{tasks[0]->task_id, tasks[1]->task_id};
    const std::set<std::string> second{tasks[2]->task_id, tasks[3]->task_id};
    CHECK(tasks[0]->depends_on.empty());
    CHECK(tasks[1]->depends_on.empty());
    CHECK(tasks[2]->depends_on == first);
    CHECK(tasks[3]->depends_on == first);
    CHECK(tasks[4]->depends_on == second);
  }

  TEST_CASE("finalize cannot land on a client-mode scheduler") {
    std::vector<NodeDescriptor> nodes{holder('a'), bare('e', NodeMode::Client)};
    CHECK_THROWS_AS(compile(forest_artifact(), nodes, fp('e')), Error);
    try {
      compile(forest_artifact(), nodes, fp('e'));
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnassignableTask);
    }
    std::vector<NodeDescriptor> none{bare('e')};
    try {
      compile(forest_artifact(), none, fp('e'));
      FAIL("expected NoDataHolders");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NoDataHolders);
    }
  }

  TEST_CASE("compile is deterministic up to ids and every parallel block covers all holders") {
    InstructionGen gen(11);
    for (int round = 0; round < 50; ++round) {
      std::vector<NodeDescriptor> nodes;
      const int holders = gen.pick(1, 6);
      for (int i = 0; i < holders; ++i) nodes.push_back(holder(static_cast<char>('a' + i)));
      nodes.push_back(bare('z'));
      Artifact a = forest_artifact();
      const int blocks = gen.pick(1, 4);
      for (int i = 0; i < blocks; ++i) {
        a.instructions.insert(a.instructions.begin(), a.instructions[0]);
      }
      const TaskGraph g1 = compile(a, nodes, fp('z'));
      const TaskGraph g2 = compile(a, nodes, fp('z'));
      REQUIRE(g1.size() == g2.size());
      CHECK(g1.size() == static_cast<std::size_t>((blocks + 1) * holders + 1));
      CHECK(topological_order(g1).size() == g1.size());
      std::map<std::string, std::size_t> position;
      for (std::size_t i = 0; i < g1.order.size(); ++i) position[g1.order[i]] = i;
      for (std::size_t i = 0; i < g1.order.size(); ++i) {
        const Task& t1 = g1.at(g1.order[i]);
        const Task& t2 = g2.at(g2.order[i]);
        CHECK(t1.assigned_node == t2.assigned_node);
        CHECK(t1.instruction == t2.instruction);
        std::set<std::size_t> d1;
        for (const auto& d : t1.depends_on) d1.insert(position.at(d));
        std::set<std::size_t> d2;
        for (const auto& d : t2.depends_on) {
          d2.insert(static_cast<std::size_t>(
              std::find(g2.order.begin(), g2.order.end(), d) - g2.order.begin()));
        }
        CHECK(d1 == d2);
      }
    }
  }

  TEST_CASE("ready_set follows the unlock rule") {
    std::vector<NodeDescriptor> nodes{holder('a'), holder('b'), holder('c'), bare('e')};
    TaskGraph g = compile(forest_artifact(), nodes, fp('e'));
    const std::set<std::string> first{g.order[0], g.order[1], g.order[2]};
    CHECK(ready_set(g) == first);
    for (int i = 0; i < 2; ++i) g.at(g.order[i]).status = TaskStatus::Completed;
    CHECK(ready_set(g) == std::set<std::string>{g.order[2]});
    g.at(g.order[2]).status = TaskStatus::Completed;
    CHECK(ready_set(g) == std::set<std::string>{g.order[3]});
    CHECK(ready_set(TaskGraph{}).empty());
  }

  TEST_CASE("topological_order rejects cycles and dangling edges") {
    TaskGraph g;
    Task a;
    a.task_id = "a";
    a.depends_on = {"b"};
    Task b;
    b.task_id = "b";
    b.depends_on = {"a"};
    g.tasks = {{"a", a}, {"b", b}};
    CHECK_THROWS_AS(topological_order(g), Error);
    g.tasks.erase("b");
    CHECK_THROWS_AS(topological_order(g), Error);
  }
}

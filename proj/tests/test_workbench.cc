#include <doctest.h>

#include <fstream>
#include <thread>

#include "federation.h"
#include "fleet/forest.h"
#include "fleet/workbench.h"
#include "support.h"

using namespace fleet;
using namespace fleet::testing;

namespace {

std::size_t tree_count(const Bytes& model) { return deserialize_forest(to_string(model)).trees.size(); }

bool sent(const Federation& fed, const std::string& route) {
  for (const auto& e : fed.trace()) {
    if (e.route == route) return true;
  }
  return false;
}

}  // namespace

TEST_SUITE("workbench") {
  TEST_CASE("plan files round trip through canonical serialization") {
    TempDir dir;
    const auto path = dir.path() / "plan.json";
    std::ofstream(path) << kForestPlan;
    const auto plan = load_plan_file(path);
    CHECK(canonical_serialize(plan) == kForestPlan);
    CHECK(plan == forest_plan());
    CHECK(thrown_code([] { parse_plan(R"({"kind":"parallel"})"); }) == ErrorCode::MalformedDocument);
    CHECK(thrown_code([&] { load_plan_file(dir.path() / "missing.json"); }) ==
          ErrorCode::MalformedDocument);
  }

  TEST_CASE("connect fails on unreachable entry points") {
    CHECK(thrown_code([] { Context::connect("http://127.0.0.1:1"); }) == ErrorCode::Unreachable);
    CHECK(thrown_code([] { Context::connect("not a url at all"); }) == ErrorCode::Unreachable);
    CHECK(thrown_code([] { Context::connect("http://"); }) == ErrorCode::Unreachable);
  }

  TEST_CASE("a client-mode node cannot serve as entry point") {
    auto fed = Federation::spawn(scenario("hub"), quick());
    CHECK(fed->url_of("P1").empty());
    // Nothing listens on a client-mode node, so the only address a workbench
    // could try is refused.
    CHECK(fed->listening_sockets_of("P1") == 0);
    CHECK(thrown_code([] { Context::connect("http://127.0.0.1:1"); }) == ErrorCode::Unreachable);
  }

  TEST_CASE("project lookup returns metadata only") {
    auto fed = Federation::spawn(scenario("gateway"), quick());
    Context ctx = Context::connect(fed->entry_url());
    CHECK(ctx.connected());
    CHECK(ctx.entry_fingerprint() == fed->fingerprint_of("P4"));
    const ProjectDescriptor p1 = ctx.project("p1");
    CHECK(p1.code == "p1");
    CHECK(p1.name == "Synthetic cohort");
    CHECK(p1.holder_count == 3);
    CHECK(p1.columns == std::vector<std::string>{"f0", "f1", "f2", "target"});
    const std::string text = canonical_dump(Json(p1));
    CHECK(text.find("csv") == std::string::npos);
    CHECK(text.find("4.5") == std::string::npos);
    CHECK(ctx.project("p2").holder_count == 1);
    CHECK(thrown_code([&] { ctx.project("nope"); }) == ErrorCode::UnknownProject);
  }

  TEST_CASE("invalid plans are refused and create no tasks") {
    auto fed = Federation::spawn(scenario("gateway"), quick());
    Context ctx = Context::connect(fed->entry_url(), std::nullopt, fed->tap());

    auto plan = forest_plan();
    std::vector<Instruction> bad = plan;
    std::get<Parallel>(bad[0].body).steps.insert(
        std::get<Parallel>(bad[0].body).steps.begin(),
        Instruction{Opaque{"exfiltrate", R"({"kind":"exfiltrate"})"}});

    fed->clear_trace();
    CHECK(thrown_code([&] { ctx.submit("p1", bad); }) == ErrorCode::ValidationError);
    CHECK_FALSE(sent(*fed, "POST /workbench/artifact"));
    CHECK(thrown_code([&] { ctx.submit("p1", {}); }) == ErrorCode::ValidationError);
    CHECK(thrown_code([&] { ctx.submit("nope", plan); }) == ErrorCode::UnknownProject);

    // The entry point re-validates what a modified workbench might send.
    Node* entry = fed->node("P4");
    const Identity rogue = Identity::generate(60);
    Messenger m(rogue);
    m.call(entry->url(), entry->fingerprint(), entry->public_keys(), "POST", "/workbench/connect",
           Json::object(), true);
    try {
      m.call(entry->url(), entry->fingerprint(), entry->public_keys(), "POST",
             "/workbench/artifact", Json{{"instructions", bad}, {"project_code", "p1"}});
      FAIL("accepted");
    } catch (const ValidationError& e) {
      CHECK(e.kind() == "exfiltrate");
    }
    CHECK(entry->scheduler()->total_tasks() == 0);
    CHECK(entry->scheduler()->artifacts().empty());
  }

  TEST_CASE("submit, status and fetch") {
    auto fed = Federation::spawn(scenario("gateway"), quick());
    Context ctx = Context::connect(fed->entry_url());
    const ArtifactHandle h = ctx.submit("p1", forest_plan());
    CHECK(is_hex_id(h.artifact_id));
    CHECK(h.tasks == 4);
    const ArtifactStatusReport done = ctx.wait(h, std::chrono::seconds(30));
    CHECK(done.status == ArtifactStatus::Completed);
    REQUIRE(done.tasks.size() == 4);
    for (const auto& t : done.tasks) CHECK(t.status == TaskStatus::Completed);
    const auto resources = ctx.get_latest_resource(h);
    REQUIRE(resources.size() == 1);
    CHECK(tree_count(resources.at("model")) == 30);

    CHECK(thrown_code([&] { ctx.status({new_id()}); }) == ErrorCode::UnknownArtifact);
    CHECK(thrown_code([&] { ctx.status({"not-an-artifact"}); }) == ErrorCode::UnknownArtifact);
    CHECK(thrown_code([&] { ctx.get_latest_resource({new_id()}); }) == ErrorCode::UnknownArtifact);

    // Another workbench cannot read this artifact's result.
    Context other = Context::connect(fed->entry_url());
    CHECK(thrown_code([&] { other.get_latest_resource(h); }) == ErrorCode::Forbidden);
  }

  TEST_CASE("results are not ready while running or after an abort") {
    auto fed = Federation::spawn(scenario("gateway"), quick());
    Context ctx = Context::connect(fed->entry_url());

    fed->inject_failure("P1", Fault::CrashBeforeReport);
    const ArtifactHandle stuck = ctx.submit("p1", forest_plan());
    ArtifactStatusReport s;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
    std::size_t completed = 0;
    while (std::chrono::steady_clock::now() < deadline) {
      s = ctx.status(stuck);
      completed = 0;
      for (const auto& t : s.tasks) completed += t.status == TaskStatus::Completed ? 1 : 0;
      if (completed == 2) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    CHECK(s.status == ArtifactStatus::Running);
    CHECK(completed == 2);
    CHECK(thrown_code([&] { ctx.get_latest_resource(stuck); }) == ErrorCode::NotReady);

    fed->inject_failure("P2", Fault::TaskException);
    const ArtifactHandle failing = ctx.submit("p1", forest_plan());
    const ArtifactStatusReport aborted = ctx.wait(failing, std::chrono::seconds(30));
    CHECK(aborted.status == ArtifactStatus::Aborted);
    CHECK(aborted.reason.find("task_exception") != std::string::npos);
    try {
      ctx.get_latest_resource(failing);
      FAIL("fetched an aborted artifact");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NotReady);
      CHECK(std::string(e.what()).find("task_exception") != std::string::npos);
    }
  }

  TEST_CASE("several workbenches run side by side") {
    auto fed = Federation::spawn(scenario("mesh"), quick());
    std::vector<std::pair<std::uint32_t, std::size_t>> results(4);
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < results.size(); ++i) {
      threads.emplace_back([&, i] {
        const std::uint32_t trees = static_cast<std::uint32_t>(2 + i);
        Context ctx = Context::connect(fed->url_of(i % 2 == 0 ? "P1" : "P4"));
        const ArtifactHandle h = ctx.submit("p1", forest_plan(trees));
        if (ctx.wait(h, std::chrono::seconds(30)).status == ArtifactStatus::Completed) {
          results[i] = {trees, tree_count(ctx.get_latest_resource(h).at("model"))};
        }
      });
    }
    for (auto& t : threads) t.join();
    for (const auto& [trees, got] : results) CHECK(got == 3 * trees);
  }
}

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run run_cli(const std::string& args) {
  Run r;
  const std::string cmd = std::string(FLEET_WB_BINARY) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  r.status = ::pclose(pipe);
  while (!r.out.empty() && r.out.back() == '\n') r.out.pop_back();
  return r;
}

}  // namespace

TEST_SUITE("workbench") {
  TEST_CASE("the command line client drives a full run") {
    auto fed = Federation::spawn(scenario("gateway"), quick());
    TempDir dir;
    const auto plan = dir.path() / "plan.json";
    std::ofstream(plan) << kForestPlan;
    const std::string key = (dir.path() / "wb.key").string();
    const std::string common = "--key " + key + " ";
    const std::string entry = " --entry " + fed->entry_url();

    const Run project = run_cli(common + "project" + entry + " --code p1");
    REQUIRE(project.status == 0);
    CHECK(parse_json(project.out)["holder_count"] == 3);

    const Run submit = run_cli(common + "submit" + entry + " --code p1 --plan " + plan.string());
    REQUIRE(submit.status == 0);
    CHECK(is_hex_id(submit.out));

    Json status;
    for (int i = 0; i < 500; ++i) {
      status = parse_json(run_cli(common + "status" + entry + " --artifact " + submit.out).out);
      if (status["status"] == "COMPLETED") break;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    CHECK(status["status"] == "COMPLETED");
    CHECK(status["tasks"].size() == 4);

    const auto out = dir.path() / "out";
    const Run fetch = run_cli(common + "fetch" + entry + " --artifact " + submit.out + " --out " + out.string());
    REQUIRE(fetch.status == 0);
    std::ifstream model(out / "model", std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(model)), std::istreambuf_iterator<char>());
    CHECK(deserialize_forest(bytes).trees.size() == 30);

    const Run unknown = run_cli(common + "project" + entry + " --code nope");
    CHECK(unknown.status != 0);
    CHECK(unknown.out.rfind("UnknownProject", 0) == 0);
    CHECK(run_cli("status --entry http://127.0.0.1:1 --artifact x").out.rfind("Unreachable", 0) == 0);
  }
}

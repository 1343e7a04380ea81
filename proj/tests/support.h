#pragma once

// Shared fixtures and generators for the unit and acceptance suites.

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fleet/model.h"
#include "fleet/planner.h"

namespace fleet::testing {

// The plan-file form of the reference pipeline: parallel train/test with a
// federated split, collect, then a finalize block that merges.
inline constexpr const char* kForestPlan =
    R"([{"kind":"parallel","steps":[{"kind":"train_test","model":{"kind":"random_forest","max_depth":5,"n_estimators":10,"random_state":42,"strategy":"merge"},"query":{"transformers":[{"kind":"federated_splitter","label":"target","random_state":42,"test_percentage":0.2}]}},{"kind":"collect"}]},{"kind":"finalize","steps":[{"kind":"aggregation","strategy":"merge"}]}])";

inline std::vector<Instruction> forest_instructions() {
  return canonical_deserialize<std::vector<Instruction>>(kForestPlan);
}

inline Artifact forest_artifact(const std::string& project = "p1") {
  Artifact a;
  a.artifact_id = new_id();
  a.project_code = project;
  a.instructions = forest_instructions();
  a.submitted_by = std::string(64, 'w');
  return a;
}

inline DataSource source(const std::string& id, std::set<std::string> codes) {
  DataSource ds;
  ds.data_source_id = id;
  ds.path = "/nonexistent/" + id + ".csv";
  ds.columns = {"x", "target"};
  ds.project_codes = std::move(codes);
  return ds;
}

inline Fingerprint fp(char c) { return Fingerprint(64, c); }

inline NodeDescriptor holder(char c, NodeMode mode = NodeMode::Default,
                             const std::string& project = "p1") {
  return NodeDescriptor{fp(c), mode, {source(std::string("ds-") + c, {project})}};
}

inline NodeDescriptor bare(char c, NodeMode mode = NodeMode::Default) {
  return NodeDescriptor{fp(c), mode, {}};
}

// Random well-formed (not necessarily whitelisted) instruction trees.
class InstructionGen {
 public:
  explicit InstructionGen(std::uint64_t seed) : rng_(seed) {}

  ModelSpec model() {
    ModelSpec m;
    m.n_estimators = pick(1, 50);
    m.max_depth = pick(1, 12);
    m.random_state = rng_();
    return m;
  }

  Query query() {
    Query q;
    const int n = pick(0, 2);
    for (int i = 0; i < n; ++i) {
      if (pick(0, 4) == 0) {
        q.transformers.push_back(Opaque{
            "scaler", R"({"k":)" + std::to_string(pick(0, 9)) + R"(,"kind":"scaler"})"});
      } else {
        FederatedSplitter s;
        s.random_state = rng_();
        s.test_percentage = static_cast<double>(pick(1, 99)) / 100.0;
        s.label = "label" + std::to_string(pick(0, 3));
        q.transformers.push_back(s);
      }
    }
    return q;
  }

  Instruction step() {
    switch (pick(0, 4)) {
      case 0: return TrainTest{query(), model()};
      case 1: return Train{model()};
      case 2: return Collect{};
      case 3: return Aggregation{};
      default:
        return Opaque{"exfiltrate", R"({"kind":"exfiltrate","target":")" +
                                        std::to_string(pick(0, 99)) + R"("})"};
    }
  }

  Instruction block() {
    std::vector<Instruction> steps;
    const int n = pick(0, 3);
    for (int i = 0; i < n; ++i) steps.push_back(step());
    if (pick(0, 1) == 0) return Parallel{steps};
    return Finalize{steps};
  }

  Artifact artifact() {
    Artifact a;
    a.artifact_id = pick(0, 1) ? new_id() : std::string();
    a.project_code = "p" + std::to_string(pick(0, 5));
    const int n = pick(0, 3);
    for (int i = 0; i < n; ++i) a.instructions.push_back(block());
    a.submitted_by = std::string(64, static_cast<char>('a' + pick(0, 5)));
    return a;
  }

  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Code of the fleet::Error thrown by `fn`, or nullopt when it returns.
inline std::optional<ErrorCode> thrown_code(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() / ("fleet-test-" + new_id());
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fleet::testing

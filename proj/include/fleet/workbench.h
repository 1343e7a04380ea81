#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fleet/identity.h"
#include "fleet/model.h"
#include "fleet/planner.h"
#include "fleet/scheduler.h"
#include "fleet/transport.h"

namespace fleet {

struct Plan {
  std::string project_code;
  std::vector<Instruction> instructions;
};

// A plan file is a JSON array of instructions. Throws MalformedDocument.
std::vector<Instruction> load_plan_file(const std::filesystem::path& path);
std::vector<Instruction> parse_plan(std::string_view text);

struct ProjectDescriptor {
  std::string code;
  std::string name;
  std::size_t holder_count = 0;
  std::vector<std::string> columns;
  std::vector<DataSourceRef> refs;
};

void to_json(Json& j, const ProjectDescriptor& p);
void from_json(const Json& j, ProjectDescriptor& p);

struct ArtifactHandle {
  std::string artifact_id;
  std::size_t tasks = 0;
};

struct TaskRow {
  std::string task_id;
  std::string block;
  Fingerprint node;
  TaskStatus status = TaskStatus::Created;
  std::string reason;
};

struct ArtifactStatusReport {
  std::string artifact_id;
  ArtifactStatus status = ArtifactStatus::Submitted;
  std::string reason;
  std::vector<TaskRow> tasks;
};

Json to_json(const ArtifactStatusReport& r);

/// Analyst-side session with one entry point. One caller at a time.
class Context {
 public:
  // Throws Unreachable or HandshakeFailed.
  static Context connect(const std::string& url, std::optional<Identity> identity = std::nullopt,
                         TraceTap trace = {});

  Context(Context&&) noexcept;
  Context& operator=(Context&&) noexcept;
  ~Context();

  const std::string& url() const { return url_; }
  const Fingerprint& fingerprint() const { return identity_->fingerprint(); }
  const Fingerprint& entry_fingerprint() const { return entry_.fingerprint; }
  bool connected() const { return connected_; }

  // Throws UnknownProject.
  ProjectDescriptor project(const std::string& code);
  // Validates locally against the built-in whitelist before sending.
  ArtifactHandle submit(const Plan& plan);
  ArtifactHandle submit(const std::string& project_code, const std::vector<Instruction>& plan);
  // Throws UnknownArtifact.
  ArtifactStatusReport status(const ArtifactHandle& handle);
  // Throws NotReady or UnknownArtifact.
  std::map<std::string, Bytes> get_latest_resource(const ArtifactHandle& handle);
  // Polls until the artifact is COMPLETED or ABORTED. Throws Timeout.
  ArtifactStatusReport wait(const ArtifactHandle& handle,
                            std::chrono::milliseconds timeout = std::chrono::seconds(60),
                            std::chrono::milliseconds interval = std::chrono::milliseconds(20));

 private:
  Context() = default;
  Json call(const std::string& method, const std::string& path, Json body = Json::object());

  std::string url_;
  std::unique_ptr<Identity> identity_;
  NodeMetadata entry_;
  std::unique_ptr<Messenger> messenger_;
  bool connected_ = false;
};

}  // namespace fleet

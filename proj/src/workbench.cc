#include "fleet/workbench.h"

#include <fstream>
#include <sstream>
#include <thread>

#include "fleet/json.h"

namespace fleet {

std::vector<Instruction> parse_plan(std::string_view text) {
  const Json j = parse_json(text);
  if (!j.is_array()) throw Error(ErrorCode::MalformedDocument, "plan must be a JSON array");
  try {
    return j.get<std::vector<Instruction>>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
}

std::vector<Instruction> load_plan_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedDocument, "cannot read plan " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_plan(ss.str());
}

void to_json(Json& j, const ProjectDescriptor& p) {
  j = Json{{"code", p.code},
           {"columns", p.columns},
           {"data_source_refs", p.refs},
           {"holder_count", p.holder_count},
           {"name", p.name}};
}

void from_json(const Json& j, ProjectDescriptor& p) {
  p.code = require_as<std::string>(j, "code");
  p.name = require_as<std::string>(j, "name");
  p.holder_count = require_as<std::size_t>(j, "holder_count");
  p.columns = require_as<std::vector<std::string>>(j, "columns");
  p.refs = require_as<std::vector<DataSourceRef>>(j, "data_source_refs");
}

Json to_json(const ArtifactStatusReport& r) {
  Json tasks = Json::array();
  for (const auto& t : r.tasks) {
    tasks.push_back(Json{{"block", t.block},
                         {"node", t.node},
                         {"reason", t.reason},
                         {"status", to_string(t.status)},
                         {"task_id", t.task_id}});
  }
  return Json{{"artifact_id", r.artifact_id},
              {"reason", r.reason},
              {"status", to_string(r.status)},
              {"tasks", tasks}};
}

Context::Context(Context&&) noexcept = default;
Context& Context::operator=(Context&&) noexcept = default;
Context::~Context() = default;

Context Context::connect(const std::string& url, std::optional<Identity> identity,
                         TraceTap trace) {
  Context ctx;
  ctx.url_ = url;
  ctx.identity_ = std::make_unique<Identity>(identity ? std::move(*identity) : Identity::generate());
  ctx.entry_ = fetch_metadata(url);
  if (ctx.entry_.mode != NodeMode::Default) {
    throw Error(ErrorCode::HandshakeFailed, "entry point is not a default-mode node");
  }
  ctx.messenger_ = std::make_unique<Messenger>(*ctx.identity_, std::move(trace));
  try {
    ctx.messenger_->call(url, ctx.entry_.fingerprint, ctx.entry_.keys, "POST", "/workbench/connect",
                         Json::object(), true);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Unreachable) throw;
    throw Error(ErrorCode::HandshakeFailed, std::string(error_code_name(e.code())) + ": " + e.what());
  }
  ctx.connected_ = true;
  return ctx;
}

Json Context::call(const std::string& method, const std::string& path, Json body) {
  if (!connected_) throw Error(ErrorCode::NotConnected, "workbench context is not connected");
  return messenger_->call(url_, entry_.fingerprint, entry_.keys, method, path, std::move(body));
}

ProjectDescriptor Context::project(const std::string& code) {
  return call("GET", "/workbench/project/" + code).get<ProjectDescriptor>();
}

ArtifactHandle Context::submit(const std::string& project_code,
                               const std::vector<Instruction>& plan) {
  if (!connected_) throw Error(ErrorCode::NotConnected, "workbench context is not connected");
  if (project_code.empty()) throw ValidationError("project", "project code must be non-empty");
  validate(plan, InstructionRegistry::defaults());
  const Json r = call("POST", "/workbench/artifact",
                      Json{{"instructions", plan}, {"project_code", project_code}});
  return ArtifactHandle{require_as<std::string>(r, "artifact_id"), require_as<std::size_t>(r, "tasks")};
}

ArtifactHandle Context::submit(const Plan& plan) {
  return submit(plan.project_code, plan.instructions);
}

ArtifactStatusReport Context::status(const ArtifactHandle& handle) {
  const Json r = call("GET", "/workbench/artifact/" + handle.artifact_id + "/status");
  ArtifactStatusReport out;
  out.artifact_id = require_as<std::string>(r, "artifact_id");
  out.status = artifact_status_from_string(require_as<std::string>(r, "status"));
  out.reason = require_as<std::string>(r, "reason");
  for (const Json& t : require(r, "tasks")) {
    out.tasks.push_back(TaskRow{require_as<std::string>(t, "task_id"),
                                require_as<std::string>(t, "block"),
                                require_as<std::string>(t, "node"),
                                task_status_from_string(require_as<std::string>(t, "status")),
                                require_as<std::string>(t, "reason")});
  }
  return out;
}

std::map<std::string, Bytes> Context::get_latest_resource(const ArtifactHandle& handle) {
  const Json r = call("GET", "/workbench/artifact/" + handle.artifact_id + "/latest");
  std::map<std::string, Bytes> out;
  for (const auto& [name, b64] : require(r, "resources").items()) {
    out.emplace(name, base64_decode(b64.get<std::string>()));
  }
  return out;
}

ArtifactStatusReport Context::wait(const ArtifactHandle& handle, std::chrono::milliseconds timeout,
                                   std::chrono::milliseconds interval) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    ArtifactStatusReport s = status(handle);
    if (s.status == ArtifactStatus::Completed || s.status == ArtifactStatus::Aborted) return s;
    if (std::chrono::steady_clock::now() >= deadline) {
      throw Error(ErrorCode::Timeout, "artifact " + handle.artifact_id + " still " +
                                          std::string(to_string(s.status)));
    }
    std::this_thread::sleep_for(interval);
  }
}

}  // namespace fleet

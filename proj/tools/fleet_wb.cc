#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "fleet/json.h"
#include "fleet/workbench.h"

namespace {

fleet::Identity workbench_identity(const std::string& key_file) {
  if (key_file.empty()) return fleet::Identity::generate();
  return fleet::Identity::load_or_create(key_file);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Workbench client for a federated data space"};
  app.require_subcommand(1);
  std::string entry;
  std::string key_file;
  app.add_option("--key", key_file, "Workbench key file, created when missing");

  std::string code, plan_path, artifact_id, out_dir;
  auto* project = app.add_subcommand("project", "Describe a project");
  project->add_option("--entry", entry, "Entry point URL")->required();
  project->add_option("--code", code, "Project code")->required();

  auto* submit = app.add_subcommand("submit", "Submit a plan file, print the artifact id");
  submit->add_option("--entry", entry, "Entry point URL")->required();
  submit->add_option("--code", code, "Project code")->required();
  submit->add_option("--plan", plan_path, "Plan file")->required()->check(CLI::ExistingFile);

  auto* status = app.add_subcommand("status", "Show artifact and task states");
  status->add_option("--entry", entry, "Entry point URL")->required();
  status->add_option("--artifact", artifact_id, "Artifact id")->required();

  auto* fetch = app.add_subcommand("fetch", "Write the latest resources into a directory");
  fetch->add_option("--entry", entry, "Entry point URL")->required();
  fetch->add_option("--artifact", artifact_id, "Artifact id")->required();
  fetch->add_option("--out", out_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    fleet::Context ctx = fleet::Context::connect(entry, workbench_identity(key_file));
    if (*project) {
      std::cout << fleet::canonical_dump(fleet::Json(ctx.project(code))) << '\n';
    } else if (*submit) {
      std::cout << ctx.submit(code, fleet::load_plan_file(plan_path)).artifact_id << '\n';
    } else if (*status) {
      std::cout << fleet::canonical_dump(fleet::to_json(ctx.status({artifact_id}))) << '\n';
    } else if (*fetch) {
      std::filesystem::create_directories(out_dir);
      for (const auto& [name, bytes] : ctx.get_latest_resource({artifact_id})) {
        const auto path = std::filesystem::path(out_dir) / name;
        std::ofstream(path, std::ios::binary)
            .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        std::cout << path.string() << '\n';
      }
    }
  } catch (const fleet::Error& e) {
    std::cerr << fleet::error_code_name(e.code()) << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

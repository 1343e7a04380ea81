#include <signal.h>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>

#include "fleet/node.h"

int main(int argc, char** argv) {
  CLI::App app{"Federated data space node"};
  std::string config_path;
  app.add_option("--config", config_path, "Node configuration file")->required();
  CLI11_PARSE(app, argc, argv);

  fleet::init_logging();

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  std::unique_ptr<fleet::Node> node;
  try {
    node = fleet::Node::start(fleet::load_node_config(config_path));
  } catch (const fleet::Error& e) {
    spdlog::error("{}: {}", fleet::error_code_name(e.code()), e.what());
    return 2;
  }
  std::cout << "ready " << (node->url().empty() ? "-" : node->url()) << ' ' << node->fingerprint()
            << std::endl;

  int sig = 0;
  sigwait(&signals, &sig);
  spdlog::info("{} shutting down", node->name());
  node->stop();
  return 0;
}

#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "reframe/gateway.hpp"
#include "reframe/protocol.hpp"

namespace reframe {

// Entry point of the `reframe` tool. args excludes the program name.
// Returns 0 on success, 1 on a runtime error (one JSON line on err), 2 on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// "scripted:<file>" (one reply per line, "\n" escapes; a .json file holds an array),
// "http:<url>", or "http:<config.json>".
struct BackendSpec {
  BackendConfig config;
  bool scripted = false;
};
BackendSpec parse_backend_spec(const std::string& spec);

// Fresh backend per seed; scripted replies get {case_id}, {thinking_trap} and {thought} filled in.
std::shared_ptr<ChatBackend> backend_for_seed(const BackendSpec& spec, const SeedCase& seed);

// --config expansion: every key of the JSON object becomes "--key value" ahead of the
// explicit arguments, so explicit arguments win.
std::vector<std::string> expand_config_args(const std::vector<std::string>& args);

}  // namespace reframe

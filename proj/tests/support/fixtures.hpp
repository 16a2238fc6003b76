#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "reframe/panas.hpp"
#include "reframe/protocol.hpp"
#include "reframe/simulation.hpp"

namespace fixtures {

std::filesystem::path source_path(const std::string& relative);

// The eight clients' pre/post questionnaires.
const std::vector<reframe::PanasResponse>& client_change();
const reframe::PanasResponse& response(int client, reframe::PanasPhase phase);

reframe::SeedCase seed(int i, reframe::SeedSource source = reframe::SeedSource::kTrainSource);
std::vector<reframe::SeedCase> seeds(int n, int first = 0, reframe::SeedSource source = reframe::SeedSource::kTrainSource);

// Client replies that pass the rule validator for this seed, one per stage.
std::vector<std::string> passing_client_replies(const reframe::SeedCase& seed);
std::vector<std::string> therapist_replies();
// A stage-1 reply that fails the rule validator (therapist voice, no feelings).
std::string failing_client_reply();

reframe::BackendFactory scripted_factory();

reframe::SimulationConfig logical_config();

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures

#include "fixtures.hpp"

#include <atomic>
#include <random>

#include "reframe/gateway.hpp"
#include "reframe/io.hpp"

namespace fixtures {

using namespace reframe;

std::filesystem::path source_path(const std::string& relative) {
  return std::filesystem::path(REFRAME_SOURCE_DIR) / relative;
}

const std::vector<PanasResponse>& client_change() {
  static const std::vector<PanasResponse> responses =
      parse_responses(nlohmann::json::parse(read_text_file(source_path("data/fixtures/client_change.json"))));
  return responses;
}

const PanasResponse& response(int client, PanasPhase phase) {
  const std::string id = "client-" + std::to_string(client);
  for (const auto& r : client_change()) {
    if (r.client_id == id && r.phase == phase) return r;
  }
  throw std::runtime_error("no fixture for " + id);
}

SeedCase seed(int i, SeedSource source) {
  static const char* traps[] = {"catastrophizing", "mind reading", "all-or-nothing thinking", "personalizing",
                                "overgeneralizing"};
  static const char* topics[] = {"exam", "presentation", "interview", "dinner party", "project deadline",
                                 "driving test", "phone call", "family visit"};
  const std::string topic = topics[i % 8];
  return SeedCase{(source == SeedSource::kTestSource ? "test-" : "case-") + std::to_string(i), traps[i % 5],
                  "Everyone will laugh at me during the " + topic + " number " + std::to_string(i) + ".", source};
}

std::vector<SeedCase> seeds(int n, int first, SeedSource source) {
  std::vector<SeedCase> out;
  for (int i = first; i < first + n; ++i) out.push_back(seed(i, source));
  return out;
}

std::vector<std::string> passing_client_replies(const SeedCase& s) {
  return {"Lately I keep thinking: " + s.thought + " I feel anxious and ashamed about it.",
          "The situation is just the upcoming event. The part about everyone laughing, " + s.thought +
              ", is my thought about it.",
          "Maybe not everyone will laugh; " + s.thought + " might just be my fear talking."};
}

std::vector<std::string> therapist_replies() {
  return {"That sounds hard. Which part is what happened, and which part is your interpretation?",
          "How would you comfort a friend in this situation? What else could explain it?",
          "You worked hard today. Next time the thought comes, note one balanced alternative."};
}

std::string failing_client_reply() { return "You should try to relax and I suggest you breathe."; }

BackendFactory scripted_factory() {
  return [](const SeedCase& s, size_t) {
    return Backends{std::make_shared<ScriptedBackend>(passing_client_replies(s)),
                    std::make_shared<ScriptedBackend>(therapist_replies()), nullptr};
  };
}

SimulationConfig logical_config() {
  SimulationConfig c;
  c.timestamps = TimestampMode::kLogical;
  c.logical_start = parse_utc("2024-01-01T00:00:00.000Z");
  c.therapist_tag = "model-x";
  return c;
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          ("reframe-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace fixtures

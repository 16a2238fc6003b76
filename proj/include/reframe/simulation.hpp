#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reframe/gateway.hpp"
#include "reframe/protocol.hpp"

namespace reframe {

// AI-client <-> AI-therapist dialogue runner with client-turn validation.

struct ClientValidation {
  int clarity = 1;
  int role_adherence = 1;
  int compliance = 1;

  bool passed() const { return clarity == 1 && role_adherence == 1 && compliance == 1; }
  friend bool operator==(const ClientValidation&, const ClientValidation&) = default;
};

enum class ValidatorKind { kLlm, kScriptedRule };
enum class RunOutcome { kCompleted, kValidationExhausted, kBackendError, kAborted };
enum class TimestampMode { kWall, kLogical };

std::string_view to_string(ValidatorKind kind);
std::string_view to_string(RunOutcome outcome);
ValidatorKind parse_validator_kind(std::string_view text);
RunOutcome parse_run_outcome(std::string_view text);

struct SimulationConfig {
  int max_regen_attempts = 5;
  std::set<std::string> adversarial_case_ids;
  int rounds = kDefaultRounds;
  ValidatorKind validator = ValidatorKind::kScriptedRule;
  PromptSet prompts = default_prompt_set();
  double temperature = kGenerationTemperature;
  int max_tokens = 512;
  std::string client_model = "default";
  std::string therapist_model = "default";
  std::string therapist_tag;  // model tag carried into evaluation
  std::string session_prefix = "sim-";
  // Logical timestamps restart at logical_start for every run, so scripted runs are reproducible.
  TimestampMode timestamps = TimestampMode::kWall;
  Timestamp logical_start{};
};

// Throws InvalidConfig for non-positive attempts or rounds outside 1..3.
void validate_config(const SimulationConfig& config);

struct Backends {
  std::shared_ptr<ChatBackend> client;
  std::shared_ptr<ChatBackend> therapist;
  std::shared_ptr<ChatBackend> validator;  // required only for ValidatorKind::kLlm
};

// Called once per seed so each run can own independent (e.g. scripted) backends.
using BackendFactory = std::function<Backends(const SeedCase& seed, size_t index)>;

struct DialogueRun {
  Transcript transcript;
  std::vector<ClientValidation> per_turn_validation;
  bool adversarial = false;
  RunOutcome outcome = RunOutcome::kCompleted;
  std::optional<Stage> failed_stage;
  std::string error;
  std::vector<std::string> client_prompts;  // rendered stage prompts, one per client turn
  std::string therapist_system_prompt;
  std::string model_tag;

  friend bool operator==(const DialogueRun&, const DialogueRun&) = default;
};

void to_json(nlohmann::json& j, const ClientValidation& v);
void from_json(const nlohmann::json& j, ClientValidation& v);
void to_json(nlohmann::json& j, const DialogueRun& run);
void from_json(const nlohmann::json& j, DialogueRun& run);

// Deterministic text rules: non-empty, no therapist-style advice, overlap with the seed.
ClientValidation validate_client_turn_rules(const Turn& turn, Stage stage, const Transcript& context);

// Asks the backend for three "key=0|1" lines; one re-ask, then UnparseableValidatorReply.
ClientValidation validate_client_turn_llm(const Turn& turn, Stage stage, const Transcript& context,
                                          ChatBackend& backend);

ClientValidation validate_client_turn(const Turn& turn, Stage stage, const Transcript& context,
                                      ValidatorKind kind, ChatBackend* backend);

// Parses the validator reply format; nullopt if any key is missing.
std::optional<ClientValidation> parse_validation_reply(std::string_view reply);

struct ClientTurnResult {
  Turn turn;
  ClientValidation validation;
  bool exhausted = false;
  std::string prompt;
};

ClientTurnResult generate_client_turn(const SessionState& state, const SimulationConfig& config,
                                      ChatBackend& client, ChatBackend* validator, const Clock& clock);

Turn generate_therapist_turn(const SessionState& state, const SimulationConfig& config, ChatBackend& therapist,
                             const Clock& clock);

DialogueRun run_dialogue(const SeedCase& seed, const Backends& backends, const SimulationConfig& config);

// One run per seed, results in seed order regardless of completion order.
std::vector<DialogueRun> run_batch(const std::vector<SeedCase>& seeds, const BackendFactory& factory,
                                   const SimulationConfig& config, int parallelism);

// Reproducible choice of k adversarial cases out of ids.
std::set<std::string> sample_case_ids(const std::vector<std::string>& ids, size_t k, std::uint64_t seed);

}  // namespace reframe

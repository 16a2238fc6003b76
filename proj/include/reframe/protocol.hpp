#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reframe/time.hpp"

namespace reframe {

// Three-stage cognitive-reframing session model: seeds, turns, transcripts,
// the session state machine and the prompt templates that drive both sides.

enum class Role { kClient, kTherapist, kSystem };

enum class Stage : int {
  kSeparateFactsFeelings = 1,
  kBrainstorm = 2,
  kEmpatheticResponse = 3,
};

enum class SeedSource { kTrainSource, kTestSource, kUser };
// Control sessions carry no dialogue, only the two questionnaires.
enum class SessionMode { kSimulated, kLive, kControl };
enum class SessionStatus { kOpen, kComplete, kAborted };

// Human inspection outcome attached to a generated turn.
enum class TurnReview { kNone, kAccepted, kEdited };

inline constexpr int kDefaultRounds = 3;
inline constexpr int kMaxRounds = 3;

// Appended to the client prompt of adversarial cases.
inline constexpr std::string_view kAdversarialSuffix =
    "You should challenge the psychologist's ability. All of your brainstorming should be negative.";

std::string_view to_string(Role role);
std::string_view to_string(SeedSource source);
std::string_view to_string(SessionMode mode);
std::string_view to_string(SessionStatus status);
std::string_view to_string(TurnReview review);
Role parse_role(std::string_view text);
SeedSource parse_seed_source(std::string_view text);
SessionMode parse_session_mode(std::string_view text);
TurnReview parse_turn_review(std::string_view text);
std::string_view stage_name(Stage stage);

struct SeedCase {
  std::string case_id;
  std::string thinking_trap;
  std::string thought;
  SeedSource source = SeedSource::kTrainSource;

  friend bool operator==(const SeedCase&, const SeedCase&) = default;
};

// Throws InvalidSeed when the trap or thought is empty.
void validate_seed(const SeedCase& seed);

struct Turn {
  Role role = Role::kClient;
  Stage stage = Stage::kSeparateFactsFeelings;
  std::string text;
  Timestamp timestamp{};
  int gen_attempts = 1;
  TurnReview review = TurnReview::kNone;
  std::optional<std::string> original_text;  // set when review == kEdited

  friend bool operator==(const Turn&, const Turn&) = default;
};

// Records a manual inspection: accept as-is, or replace the text and keep the original.
Turn review_turn(Turn turn, std::optional<std::string> replacement);

struct Transcript {
  std::string session_id;
  SeedCase seed;
  std::vector<Turn> turns;
  SessionMode mode = SessionMode::kSimulated;

  friend bool operator==(const Transcript&, const Transcript&) = default;
};

struct PromptTemplate {
  std::string template_id;
  Stage stage = Stage::kSeparateFactsFeelings;
  Role role = Role::kClient;
  std::string body;
};

struct SessionState {
  Transcript transcript;
  Stage current_stage = Stage::kSeparateFactsFeelings;
  Role awaiting = Role::kClient;
  SessionStatus status = SessionStatus::kOpen;
  int rounds = kDefaultRounds;

  friend bool operator==(const SessionState&, const SessionState&) = default;
};

std::string generate_session_id();

SessionState new_session(const SeedCase& seed, SessionMode mode,
                         std::optional<std::string> session_id = std::nullopt,
                         int rounds = kDefaultRounds);

// Returns the successor state. The input is never modified; on error nothing changes.
SessionState advance(const SessionState& state, Turn turn);

// Rebuilds a state from a transcript by replaying every turn through advance().
// Throws the first violation found (WrongRole, WrongStage, SessionClosed, ...).
SessionState replay_transcript(const Transcript& transcript, int rounds = kDefaultRounds);

// "Client: ..." / "Therapist: ..." lines in turn order.
std::string serialize_history(const Transcript& history);

std::vector<std::string> template_placeholders(std::string_view body);

std::string render_prompt(const PromptTemplate& tmpl, const SeedCase& seed, const Transcript& history,
                          bool adversarial);

// System prompts for both roles plus one template per (stage, role).
struct PromptSet {
  std::string client_system;
  std::string therapist_system;
  std::array<PromptTemplate, 3> client_stages;
  std::array<PromptTemplate, 3> therapist_stages;

  const PromptTemplate& for_turn(Role role, Stage stage) const;
};

PromptSet default_prompt_set();

// Reads client_system.txt, therapist_system.txt and stage{1,2,3}_{client,therapist}.txt.
// Missing files fall back to the built-in defaults.
PromptSet load_prompt_set(const std::filesystem::path& dir);
void save_prompt_set(const PromptSet& prompts, const std::filesystem::path& dir);

void to_json(nlohmann::json& j, const SeedCase& seed);
void from_json(const nlohmann::json& j, SeedCase& seed);
void to_json(nlohmann::json& j, const Turn& turn);
void from_json(const nlohmann::json& j, Turn& turn);
void to_json(nlohmann::json& j, const Transcript& transcript);
void from_json(const nlohmann::json& j, Transcript& transcript);
void to_json(nlohmann::json& j, const SessionState& state);
void from_json(const nlohmann::json& j, SessionState& state);

}  // namespace reframe

#include "reframe/protocol.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "reframe/assets.hpp"
#include "reframe/error.hpp"

namespace reframe {

namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 4> kPlaceholders = {"thinking_trap", "thought", "history",
                                                            "adversarial_suffix"};

bool is_placeholder_char(char c) { return (c >= 'a' && c <= 'z') || c == '_' || (c >= '0' && c <= '9'); }

// Finds the next "{identifier}" at or after pos; returns npos when none is left.
size_t next_placeholder(std::string_view body, size_t pos, size_t& end) {
  while ((pos = body.find('{', pos)) != std::string_view::npos) {
    size_t i = pos + 1;
    while (i < body.size() && is_placeholder_char(body[i])) ++i;
    if (i > pos + 1 && i < body.size() && body[i] == '}') {
      end = i + 1;
      return pos;
    }
    ++pos;
  }
  return std::string_view::npos;
}

int stage_index(Stage stage) { return static_cast<int>(stage) - 1; }

Stage stage_from_int(int value) {
  if (value < 1 || value > 3) throw Error(ErrorCode::kMalformedTranscript, "stage out of range: " + std::to_string(value));
  return static_cast<Stage>(value);
}

std::string read_asset(std::string_view name) {
  auto text = embedded_asset(name);
  if (!text) throw Error(ErrorCode::kIo, "missing embedded asset " + std::string(name));
  return std::string(*text);
}

std::string template_file_name(Role role, Stage stage) {
  return "stage" + std::to_string(static_cast<int>(stage)) + "_" + std::string(to_string(role)) + ".txt";
}

PromptTemplate make_template(Role role, Stage stage, std::string body) {
  return PromptTemplate{"stage" + std::to_string(static_cast<int>(stage)) + "_" + std::string(to_string(role)),
                        stage, role, std::move(body)};
}

std::optional<std::string> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kClient: return "client";
    case Role::kTherapist: return "therapist";
    case Role::kSystem: return "system";
  }
  return "?";
}

std::string_view to_string(SeedSource source) {
  switch (source) {
    case SeedSource::kTrainSource: return "train-source";
    case SeedSource::kTestSource: return "test-source";
    case SeedSource::kUser: return "user";
  }
  return "?";
}

std::string_view to_string(SessionMode mode) {
  switch (mode) {
    case SessionMode::kSimulated: return "simulated";
    case SessionMode::kLive: return "live";
    case SessionMode::kControl: return "control";
  }
  return "?";
}

std::string_view to_string(SessionStatus status) {
  switch (status) {
    case SessionStatus::kOpen: return "open";
    case SessionStatus::kComplete: return "complete";
    case SessionStatus::kAborted: return "aborted";
  }
  return "?";
}

std::string_view to_string(TurnReview review) {
  switch (review) {
    case TurnReview::kNone: return "none";
    case TurnReview::kAccepted: return "accepted";
    case TurnReview::kEdited: return "edited";
  }
  return "?";
}

Role parse_role(std::string_view text) {
  if (text == "client") return Role::kClient;
  if (text == "therapist") return Role::kTherapist;
  if (text == "system") return Role::kSystem;
  throw Error(ErrorCode::kMalformedTranscript, "unknown role '" + std::string(text) + "'");
}

SeedSource parse_seed_source(std::string_view text) {
  if (text == "train-source") return SeedSource::kTrainSource;
  if (text == "test-source") return SeedSource::kTestSource;
  if (text == "user") return SeedSource::kUser;
  throw Error(ErrorCode::kInvalidSeed, "unknown seed source '" + std::string(text) + "'");
}

SessionMode parse_session_mode(std::string_view text) {
  if (text == "simulated") return SessionMode::kSimulated;
  if (text == "live") return SessionMode::kLive;
  if (text == "control") return SessionMode::kControl;
  throw Error(ErrorCode::kMalformedTranscript, "unknown session mode '" + std::string(text) + "'");
}

TurnReview parse_turn_review(std::string_view text) {
  if (text == "none") return TurnReview::kNone;
  if (text == "accepted") return TurnReview::kAccepted;
  if (text == "edited") return TurnReview::kEdited;
  throw Error(ErrorCode::kMalformedTranscript, "unknown review '" + std::string(text) + "'");
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kSeparateFactsFeelings: return "SeparateFactsFeelings";
    case Stage::kBrainstorm: return "Brainstorm";
    case Stage::kEmpatheticResponse: return "EmpatheticResponse";
  }
  return "?";
}

void validate_seed(const SeedCase& seed) {
  if (seed.thinking_trap.empty()) {
    throw Error(ErrorCode::kInvalidSeed, "case '" + seed.case_id + "' has an empty thinking_trap");
  }
  if (seed.thought.empty()) {
    throw Error(ErrorCode::kInvalidSeed, "case '" + seed.case_id + "' has an empty thought");
  }
}

Turn review_turn(Turn turn, std::optional<std::string> replacement) {
  if (replacement && *replacement != turn.text) {
    if (replacement->empty()) throw Error(ErrorCode::kMalformedTranscript, "replacement text is empty");
    turn.original_text = std::move(turn.text);
    turn.text = std::move(*replacement);
    turn.review = TurnReview::kEdited;
  } else {
    turn.review = TurnReview::kAccepted;
  }
  return turn;
}

std::string generate_session_id() {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  char buf[40];
  std::snprintf(buf, sizeof(buf), "s-%016llx%08llx", static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng() & 0xffffffffULL));
  return buf;
}

SessionState new_session(const SeedCase& seed, SessionMode mode, std::optional<std::string> session_id,
                         int rounds) {
  validate_seed(seed);
  if (rounds < 1 || rounds > kMaxRounds) {
    throw Error(ErrorCode::kInvalidConfig, "rounds must be in 1.." + std::to_string(kMaxRounds));
  }
  SessionState state;
  state.transcript.session_id = session_id ? std::move(*session_id) : generate_session_id();
  state.transcript.seed = seed;
  state.transcript.mode = mode;
  state.rounds = rounds;
  return state;
}

SessionState advance(const SessionState& state, Turn turn) {
  if (state.status != SessionStatus::kOpen) {
    throw Error(ErrorCode::kSessionClosed,
                "session " + state.transcript.session_id + " is " + std::string(to_string(state.status)));
  }
  if (turn.role != state.awaiting) {
    throw Error(ErrorCode::kWrongRole, "expected a " + std::string(to_string(state.awaiting)) + " turn, got " +
                                           std::string(to_string(turn.role)));
  }
  if (turn.stage != state.current_stage) {
    throw Error(ErrorCode::kWrongStage, "expected stage " + std::to_string(static_cast<int>(state.current_stage)) +
                                            ", got stage " + std::to_string(static_cast<int>(turn.stage)));
  }
  if (turn.text.empty()) throw Error(ErrorCode::kMalformedTranscript, "turn text is empty");
  if (turn.gen_attempts < 1) throw Error(ErrorCode::kMalformedTranscript, "gen_attempts must be >= 1");

  SessionState next = state;
  next.transcript.turns.push_back(std::move(turn));
  if (next.awaiting == Role::kClient) {
    next.awaiting = Role::kTherapist;
  } else {
    next.awaiting = Role::kClient;
    if (static_cast<int>(next.current_stage) >= next.rounds) {
      next.status = SessionStatus::kComplete;
    } else {
      next.current_stage = static_cast<Stage>(static_cast<int>(next.current_stage) + 1);
    }
  }
  return next;
}

SessionState replay_transcript(const Transcript& transcript, int rounds) {
  SessionState state = new_session(transcript.seed, transcript.mode, transcript.session_id, rounds);
  for (const Turn& turn : transcript.turns) state = advance(state, turn);
  return state;
}

std::string serialize_history(const Transcript& history) {
  std::string out;
  for (const Turn& turn : history.turns) {
    if (!out.empty()) out += '\n';
    out += turn.role == Role::kClient ? "Client: " : turn.role == Role::kTherapist ? "Therapist: " : "System: ";
    out += turn.text;
  }
  return out;
}

std::vector<std::string> template_placeholders(std::string_view body) {
  std::vector<std::string> names;
  size_t end = 0;
  for (size_t pos = next_placeholder(body, 0, end); pos != std::string_view::npos;
       pos = next_placeholder(body, end, end)) {
    names.emplace_back(body.substr(pos + 1, end - pos - 2));
  }
  return names;
}

std::string render_prompt(const PromptTemplate& tmpl, const SeedCase& seed, const Transcript& history,
                          bool adversarial) {
  const std::string_view body = tmpl.body;
  std::string out;
  out.reserve(body.size() + seed.thought.size() + 64);
  bool suffix_placed = false;
  size_t copied = 0;
  size_t end = 0;
  for (size_t pos = next_placeholder(body, 0, end); pos != std::string_view::npos;
       pos = next_placeholder(body, end, end)) {
    const std::string_view name = body.substr(pos + 1, end - pos - 2);
    out.append(body.substr(copied, pos - copied));
    if (name == kPlaceholders[0]) {
      out += seed.thinking_trap;
    } else if (name == kPlaceholders[1]) {
      out += seed.thought;
    } else if (name == kPlaceholders[2]) {
      out += serialize_history(history);
    } else if (name == kPlaceholders[3]) {
      if (adversarial) out += kAdversarialSuffix;
      suffix_placed = true;
    } else {
      throw Error(ErrorCode::kUnboundPlaceholder,
                  "template '" + tmpl.template_id + "' references unknown placeholder {" + std::string(name) + "}");
    }
    copied = end;
  }
  out.append(body.substr(copied));

  // Client templates without an explicit slot still carry the suffix, appended.
  if (adversarial && !suffix_placed && tmpl.role == Role::kClient) {
    if (!out.empty() && out.back() != '\n' && out.back() != ' ') out += ' ';
    out += kAdversarialSuffix;
  }
  // A template whose suffix slot ends a line leaves trailing blanks when unset.
  while (!adversarial && suffix_placed && !out.empty() && (out.back() == ' ' || out.back() == '\n')) {
    out.pop_back();
  }
  return out;
}

const PromptTemplate& PromptSet::for_turn(Role role, Stage stage) const {
  if (role == Role::kClient) return client_stages[stage_index(stage)];
  if (role == Role::kTherapist) return therapist_stages[stage_index(stage)];
  throw Error(ErrorCode::kInvalidRequest, "no stage template for the system role");
}

PromptSet default_prompt_set() {
  PromptSet set;
  set.client_system = read_asset("templates/client_system.txt");
  set.therapist_system = read_asset("templates/therapist_system.txt");
  for (int s = 1; s <= 3; ++s) {
    const Stage stage = static_cast<Stage>(s);
    set.client_stages[s - 1] =
        make_template(Role::kClient, stage, read_asset("templates/" + template_file_name(Role::kClient, stage)));
    set.therapist_stages[s - 1] = make_template(
        Role::kTherapist, stage, read_asset("templates/" + template_file_name(Role::kTherapist, stage)));
  }
  return set;
}

PromptSet load_prompt_set(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::kIo, "template directory not found: " + dir.string());
  }
  PromptSet set = default_prompt_set();
  auto check = [](const PromptTemplate& t) {
    for (const auto& name : template_placeholders(t.body)) {
      if (std::find(kPlaceholders.begin(), kPlaceholders.end(), name) == kPlaceholders.end()) {
        throw Error(ErrorCode::kUnboundPlaceholder,
                    "template '" + t.template_id + "' references unknown placeholder {" + name + "}");
      }
    }
  };
  if (auto text = read_file(dir / "client_system.txt")) set.client_system = *text;
  if (auto text = read_file(dir / "therapist_system.txt")) set.therapist_system = *text;
  for (int s = 1; s <= 3; ++s) {
    const Stage stage = static_cast<Stage>(s);
    if (auto text = read_file(dir / template_file_name(Role::kClient, stage))) {
      set.client_stages[s - 1].body = *text;
    }
    if (auto text = read_file(dir / template_file_name(Role::kTherapist, stage))) {
      set.therapist_stages[s - 1].body = *text;
    }
    check(set.client_stages[s - 1]);
    check(set.therapist_stages[s - 1]);
  }
  return set;
}

void save_prompt_set(const PromptSet& prompts, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir / name).string());
    out << body;
  };
  write("client_system.txt", prompts.client_system);
  write("therapist_system.txt", prompts.therapist_system);
  for (int s = 1; s <= 3; ++s) {
    const Stage stage = static_cast<Stage>(s);
    write(template_file_name(Role::kClient, stage), prompts.client_stages[s - 1].body);
    write(template_file_name(Role::kTherapist, stage), prompts.therapist_stages[s - 1].body);
  }
}

void to_json(json& j, const SeedCase& seed) {
  j = json{{"case_id", seed.case_id},
           {"thinking_trap", seed.thinking_trap},
           {"thought", seed.thought},
           {"source", to_string(seed.source)}};
}

void from_json(const json& j, SeedCase& seed) {
  seed.case_id = j.at("case_id").get<std::string>();
  seed.thinking_trap = j.at("thinking_trap").get<std::string>();
  seed.thought = j.at("thought").get<std::string>();
  seed.source = parse_seed_source(j.value("source", std::string("train-source")));
}

void to_json(json& j, const Turn& turn) {
  j = json{{"role", to_string(turn.role)},
           {"stage", static_cast<int>(turn.stage)},
           {"text", turn.text},
           {"timestamp", format_utc(turn.timestamp)},
           {"gen_attempts", turn.gen_attempts}};
  if (turn.review != TurnReview::kNone) j["review"] = to_string(turn.review);
  if (turn.original_text) j["original_text"] = *turn.original_text;
}

void from_json(const json& j, Turn& turn) {
  turn.role = parse_role(j.at("role").get<std::string>());
  turn.stage = stage_from_int(j.at("stage").get<int>());
  turn.text = j.at("text").get<std::string>();
  turn.timestamp = parse_utc(j.at("timestamp").get<std::string>());
  turn.gen_attempts = j.value("gen_attempts", 1);
  turn.review = parse_turn_review(j.value("review", std::string("none")));
  if (j.contains("original_text")) {
    turn.original_text = j.at("original_text").get<std::string>();
  } else {
    turn.original_text.reset();
  }
}

void to_json(json& j, const Transcript& transcript) {
  j = json{{"session_id", transcript.session_id},
           {"mode", to_string(transcript.mode)},
           {"seed", transcript.seed},
           {"turns", transcript.turns}};
}

void from_json(const json& j, Transcript& transcript) {
  transcript.session_id = j.at("session_id").get<std::string>();
  transcript.mode = parse_session_mode(j.at("mode").get<std::string>());
  transcript.seed = j.at("seed").get<SeedCase>();
  transcript.turns = j.at("turns").get<std::vector<Turn>>();
}

void to_json(json& j, const SessionState& state) {
  j = json{{"transcript", state.transcript},
           {"current_stage", static_cast<int>(state.current_stage)},
           {"awaiting", to_string(state.awaiting)},
           {"status", to_string(state.status)},
           {"rounds", state.rounds}};
}

void from_json(const json& j, SessionState& state) {
  // Rebuilt through advance() so an inconsistent payload cannot produce an invalid state.
  const auto transcript = j.at("transcript").get<Transcript>();
  state = replay_transcript(transcript, j.value("rounds", kDefaultRounds));
  if (j.value("status", std::string("open")) == "aborted") state.status = SessionStatus::kAborted;
}

}  // namespace reframe

#include "reframe/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <regex>
#include <thread>
#include <unordered_set>

#include "reframe/error.hpp"
#include "reframe/shuffle.hpp"

namespace reframe {

namespace {

using nlohmann::json;

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "about", "after", "again", "also", "because", "been", "before", "being", "could", "does", "doing",
      "even", "from", "have", "having", "here", "into", "just", "like", "more", "most", "much", "must",
      "only", "other", "over", "really", "said", "same", "should", "some", "such", "than", "that", "their",
      "them", "then", "there", "these", "they", "thing", "things", "think", "this", "those", "very", "want",
      "what", "when", "where", "which", "while", "will", "with", "would", "your", "yours", "myself", "were",
      "it's", "i'm", "don't", "can't", "didn't", "going", "know", "make", "made", "feel", "feels", "always",
      "never", "everyone", "everything", "anything", "nothing", "something", "someone"};
  return words;
}

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::unordered_set<std::string> content_words(std::string_view text) {
  std::unordered_set<std::string> out;
  std::string word;
  auto flush = [&] {
    while (!word.empty() && word.back() == '\'') word.pop_back();
    if (word.size() >= 4 && !stopwords().contains(word)) out.insert(word);
    word.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isalpha(c) || (c == '\'' && !word.empty())) {
      word += static_cast<char>(std::tolower(c));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

size_t overlap(const std::unordered_set<std::string>& a, const std::unordered_set<std::string>& b) {
  size_t n = 0;
  for (const auto& w : a) n += b.contains(w) ? 1 : 0;
  return n;
}

bool contains_any(std::string_view haystack, std::initializer_list<std::string_view> needles) {
  return std::any_of(needles.begin(), needles.end(),
                     [&](std::string_view n) { return haystack.find(n) != std::string_view::npos; });
}

bool expresses_feeling(std::string_view lowered) {
  return contains_any(lowered, {"feel", "felt", "sad", "anxious", "anxiety", "worried", "worry", "scared",
                                "afraid", "angry", "upset", "ashamed", "guilty", "hopeless", "stressed",
                                "frustrated", "depressed", "lonely", "hurt", "embarrassed", "nervous",
                                "overwhelmed", "miserable", "terrible", "awful", "devastated", "panic"});
}

// Imperatives and counselling moves that belong to the therapist, not the client.
bool sounds_like_therapist(std::string_view lowered) {
  return contains_any(lowered, {"you should", "you need to", "i suggest", "i recommend", "my advice",
                                "i would advise", "i'd advise", "have you tried", "have you considered",
                                "you could try", "as your therapist", "as a therapist", "let's explore",
                                "let us explore", "it's important for you", "how would you comfort",
                                "your technique", "a better therapist would"});
}

// Not brainstorming because of sadness still follows the instruction.
bool reports_inability(std::string_view lowered) {
  return contains_any(lowered, {"can't think", "cannot think", "can't see", "cannot see", "too sad",
                                "too upset", "too hard", "don't know", "hard to", "nothing positive",
                                "no idea", "can't come up", "cannot come up", "unable to"});
}

Clock make_run_clock(const SimulationConfig& config) {
  return config.timestamps == TimestampMode::kLogical ? logical_clock(config.logical_start) : system_clock();
}

PromptTemplate system_template(std::string id, std::string body) {
  return PromptTemplate{std::move(id), Stage::kSeparateFactsFeelings, Role::kSystem, std::move(body)};
}

std::string render_client_system(const SimulationConfig& config, const SeedCase& seed) {
  return render_prompt(system_template("client_system", config.prompts.client_system), seed, {}, false);
}

std::string render_therapist_system(const SimulationConfig& config, const SeedCase& seed) {
  return render_prompt(system_template("therapist_system", config.prompts.therapist_system), seed, {}, false);
}

std::string failed_criteria(const ClientValidation& v) {
  std::string out;
  auto add = [&](std::string_view s) {
    if (!out.empty()) out += "; ";
    out += s;
  };
  if (v.clarity == 0) add("describe your situation and your feelings clearly");
  if (v.role_adherence == 0) add("stay in the client role and do not advise the therapist");
  if (v.compliance == 0) add("answer the therapist's question without changing the topic");
  return out;
}

bool is_backend_failure(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kTimeout:
    case ErrorCode::kBadStatus:
    case ErrorCode::kExhaustedScript:
    case ErrorCode::kMissingApiKey:
    case ErrorCode::kUnparseableValidatorReply:
    case ErrorCode::kInvalidRequest:
    case ErrorCode::kMalformedTranscript:
      return true;
    default:
      return false;
  }
}

}  // namespace

std::string_view to_string(ValidatorKind kind) { return kind == ValidatorKind::kLlm ? "llm" : "scripted-rule"; }

std::string_view to_string(RunOutcome outcome) {
  switch (outcome) {
    case RunOutcome::kCompleted: return "completed";
    case RunOutcome::kValidationExhausted: return "validation_exhausted";
    case RunOutcome::kBackendError: return "backend_error";
    case RunOutcome::kAborted: return "aborted";
  }
  return "?";
}

ValidatorKind parse_validator_kind(std::string_view text) {
  if (text == "llm") return ValidatorKind::kLlm;
  if (text == "scripted-rule") return ValidatorKind::kScriptedRule;
  throw Error(ErrorCode::kInvalidConfig, "unknown validator '" + std::string(text) + "'");
}

RunOutcome parse_run_outcome(std::string_view text) {
  if (text == "completed") return RunOutcome::kCompleted;
  if (text == "validation_exhausted") return RunOutcome::kValidationExhausted;
  if (text == "backend_error") return RunOutcome::kBackendError;
  if (text == "aborted") return RunOutcome::kAborted;
  throw Error(ErrorCode::kMalformedTranscript, "unknown outcome '" + std::string(text) + "'");
}

void validate_config(const SimulationConfig& config) {
  if (config.max_regen_attempts < 1) throw Error(ErrorCode::kInvalidConfig, "max_regen_attempts must be >= 1");
  if (config.rounds < 1 || config.rounds > kMaxRounds) {
    throw Error(ErrorCode::kInvalidConfig, "rounds must be in 1.." + std::to_string(kMaxRounds));
  }
}

void to_json(json& j, const ClientValidation& v) {
  j = json{{"clarity", v.clarity}, {"role_adherence", v.role_adherence}, {"compliance", v.compliance}};
}

void from_json(const json& j, ClientValidation& v) {
  v.clarity = j.at("clarity").get<int>();
  v.role_adherence = j.at("role_adherence").get<int>();
  v.compliance = j.at("compliance").get<int>();
}

void to_json(json& j, const DialogueRun& run) {
  j = json{{"transcript", run.transcript},
           {"per_turn_validation", run.per_turn_validation},
           {"adversarial", run.adversarial},
           {"outcome", to_string(run.outcome)},
           {"client_prompts", run.client_prompts},
           {"therapist_system_prompt", run.therapist_system_prompt},
           {"model_tag", run.model_tag}};
  if (run.failed_stage) j["failed_stage"] = static_cast<int>(*run.failed_stage);
  if (!run.error.empty()) j["error"] = run.error;
}

void from_json(const json& j, DialogueRun& run) {
  run.transcript = j.at("transcript").get<Transcript>();
  run.per_turn_validation = j.at("per_turn_validation").get<std::vector<ClientValidation>>();
  run.adversarial = j.value("adversarial", false);
  run.outcome = parse_run_outcome(j.at("outcome").get<std::string>());
  run.client_prompts = j.value("client_prompts", std::vector<std::string>{});
  run.therapist_system_prompt = j.value("therapist_system_prompt", std::string());
  run.model_tag = j.value("model_tag", std::string());
  if (j.contains("failed_stage")) {
    run.failed_stage = static_cast<Stage>(j.at("failed_stage").get<int>());
  } else {
    run.failed_stage.reset();
  }
  run.error = j.value("error", std::string());
}

ClientValidation validate_client_turn_rules(const Turn& turn, Stage stage, const Transcript& context) {
  if (turn.role != Role::kClient) throw Error(ErrorCode::kWrongRole, "only client turns are validated");
  ClientValidation v;
  const std::string lowered = lower(turn.text);
  const bool empty = std::all_of(turn.text.begin(), turn.text.end(),
                                 [](unsigned char c) { return std::isspace(c); });
  if (empty) return ClientValidation{stage == Stage::kSeparateFactsFeelings ? 0 : 1, 0, 0};

  const auto reply_words = content_words(turn.text);
  auto seed_words = content_words(context.seed.thought);
  for (auto& w : content_words(context.seed.thinking_trap)) seed_words.insert(w);
  const size_t seed_overlap = overlap(reply_words, seed_words);

  if (stage == Stage::kSeparateFactsFeelings) {
    v.clarity = seed_overlap >= 1 && expresses_feeling(lowered) ? 1 : 0;
  }
  v.role_adherence = sounds_like_therapist(lowered) ? 0 : 1;

  size_t context_overlap = seed_overlap;
  for (auto it = context.turns.rbegin(); it != context.turns.rend(); ++it) {
    if (it->role == Role::kTherapist) {
      context_overlap += overlap(reply_words, content_words(it->text));
      break;
    }
  }
  v.compliance = context_overlap >= 1 || reports_inability(lowered) ? 1 : 0;
  return v;
}

std::optional<ClientValidation> parse_validation_reply(std::string_view reply) {
  static const std::regex clarity_re(R"(clarity\s*[=:]\s*([01])\b)", std::regex::icase);
  static const std::regex role_re(R"(role(?:_adherence)?\s*[=:]\s*([01])\b)", std::regex::icase);
  static const std::regex compliance_re(R"(compliance\s*[=:]\s*([01])\b)", std::regex::icase);
  const std::string text(reply);
  std::smatch m;
  ClientValidation v;
  if (!std::regex_search(text, m, clarity_re)) return std::nullopt;
  v.clarity = m[1] == "1" ? 1 : 0;
  if (!std::regex_search(text, m, role_re)) return std::nullopt;
  v.role_adherence = m[1] == "1" ? 1 : 0;
  if (!std::regex_search(text, m, compliance_re)) return std::nullopt;
  v.compliance = m[1] == "1" ? 1 : 0;
  return v;
}

ClientValidation validate_client_turn_llm(const Turn& turn, Stage stage, const Transcript& context,
                                          ChatBackend& backend) {
  if (turn.role != Role::kClient) throw Error(ErrorCode::kWrongRole, "only client turns are validated");
  std::string prompt =
      "You are checking one reply written by a simulated client in a cognitive-reframing counseling dialogue.\n"
      "The client's starting thought: \"" + context.seed.thought + "\" (thinking trap: " +
      context.seed.thinking_trap + ")\n\nConversation so far:\n" +
      (context.turns.empty() ? std::string("(none)") : serialize_history(context)) +
      "\n\nClient reply to check (step " + std::to_string(static_cast<int>(stage)) + " of 3):\n" + turn.text +
      "\n\nAnswer each question with 1 (yes) or 0 (no).\n"
      "clarity: Does the client clearly express their current situation and emotions? "
      "Only judged in step 1; answer 1 for later steps.\n"
      "role: Does the reply stay within the client's role, without acting as the therapist or giving advice?\n"
      "compliance: Does the reply follow the therapist's instructions without shifting to another topic? "
      "A client who cannot brainstorm because they are overwhelmed by sadness still follows the instructions.\n\n"
      "Reply with exactly three lines and nothing else:\nclarity=0|1\nrole=0|1\ncompliance=0|1";

  CompletionRequest request;
  request.temperature = kScoringTemperature;
  request.max_tokens = 32;
  request.messages = {{MessageRole::kUser, prompt}};
  std::string last_reply;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const ChatMessage reply = backend.complete(request);
    last_reply = reply.content;
    if (auto parsed = parse_validation_reply(reply.content)) {
      if (stage != Stage::kSeparateFactsFeelings) parsed->clarity = 1;
      return *parsed;
    }
    request.messages.push_back(reply);
    request.messages.push_back(
        {MessageRole::kUser, "Your answer could not be read. Reply with exactly three lines: clarity=0|1, "
                             "role=0|1, compliance=0|1."});
  }
  throw Error(ErrorCode::kUnparseableValidatorReply, "validator reply after re-ask: '" + last_reply + "'");
}

ClientValidation validate_client_turn(const Turn& turn, Stage stage, const Transcript& context,
                                      ValidatorKind kind, ChatBackend* backend) {
  if (kind == ValidatorKind::kScriptedRule) return validate_client_turn_rules(turn, stage, context);
  if (backend == nullptr) throw Error(ErrorCode::kInvalidConfig, "llm validator requires a backend");
  return validate_client_turn_llm(turn, stage, context, *backend);
}

ClientTurnResult generate_client_turn(const SessionState& state, const SimulationConfig& config,
                                      ChatBackend& client, ChatBackend* validator, const Clock& clock) {
  if (state.status != SessionStatus::kOpen || state.awaiting != Role::kClient) {
    throw Error(ErrorCode::kWrongRole, "session is not awaiting a client turn");
  }
  const SeedCase& seed = state.transcript.seed;
  const Stage stage = state.current_stage;
  // The extra instruction of adversarial cases belongs to the client's brainstorming step.
  const bool adversarial =
      config.adversarial_case_ids.contains(seed.case_id) && stage == Stage::kEmpatheticResponse;

  ClientTurnResult result;
  result.prompt = render_prompt(config.prompts.for_turn(Role::kClient, stage), seed, state.transcript, adversarial);

  CompletionRequest request;
  request.temperature = config.temperature;
  request.max_tokens = config.max_tokens;
  request.model_id = config.client_model;
  request.messages =
      build_messages(render_client_system(config, seed), state.transcript, result.prompt, Perspective::kClient);

  for (int attempt = 1; attempt <= config.max_regen_attempts; ++attempt) {
    const ChatMessage reply = client.complete(request);
    Turn turn{Role::kClient, stage, reply.content, clock(), attempt, TurnReview::kNone, std::nullopt};
    const ClientValidation v = validate_client_turn(turn, stage, state.transcript, config.validator, validator);
    result.turn = std::move(turn);
    result.validation = v;
    if (v.passed()) return result;
    request.messages.push_back(reply);
    request.messages.push_back({MessageRole::kUser, "Please revise your reply: " + failed_criteria(v) + "."});
  }
  result.exhausted = true;
  return result;
}

Turn generate_therapist_turn(const SessionState& state, const SimulationConfig& config, ChatBackend& therapist,
                             const Clock& clock) {
  const SeedCase& seed = state.transcript.seed;
  const Stage stage = state.current_stage;
  const std::string prompt = render_prompt(config.prompts.for_turn(Role::kTherapist, stage), seed, state.transcript,
                                           false);
  CompletionRequest request;
  request.temperature = config.temperature;
  request.max_tokens = config.max_tokens;
  request.model_id = config.therapist_model;
  request.messages =
      build_messages(render_therapist_system(config, seed), state.transcript, prompt, Perspective::kTherapist);
  const ChatMessage reply = therapist.complete(request);
  if (reply.content.empty()) throw Error(ErrorCode::kBadStatus, "therapist backend returned an empty reply");
  return Turn{Role::kTherapist, stage, reply.content, clock(), 1, TurnReview::kNone, std::nullopt};
}

DialogueRun run_dialogue(const SeedCase& seed, const Backends& backends, const SimulationConfig& config) {
  validate_config(config);
  DialogueRun run;
  run.adversarial = config.adversarial_case_ids.contains(seed.case_id);
  run.model_tag = config.therapist_tag;
  run.transcript.session_id = config.session_prefix + seed.case_id;
  run.transcript.seed = seed;
  run.transcript.mode = SessionMode::kSimulated;

  SessionState state;
  try {
    state = new_session(seed, SessionMode::kSimulated, config.session_prefix + seed.case_id, config.rounds);
  } catch (const Error& e) {
    run.outcome = RunOutcome::kAborted;
    run.error = e.what();
    return run;
  }
  run.therapist_system_prompt = render_therapist_system(config, seed);
  if (!backends.client || !backends.therapist) {
    run.outcome = RunOutcome::kAborted;
    run.error = "InvalidConfig: client and therapist backends are required";
    return run;
  }

  const Clock clock = make_run_clock(config);
  while (state.status == SessionStatus::kOpen) {
    const Stage stage = state.current_stage;
    try {
      if (state.awaiting == Role::kClient) {
        ClientTurnResult client =
            generate_client_turn(state, config, *backends.client, backends.validator.get(), clock);
        run.client_prompts.push_back(client.prompt);
        run.per_turn_validation.push_back(client.validation);
        state = advance(state, std::move(client.turn));
        if (client.exhausted) {
          run.outcome = RunOutcome::kValidationExhausted;
          run.failed_stage = stage;
          run.error = "client turn failed validation " + std::to_string(config.max_regen_attempts) + " times";
          break;
        }
      } else {
        state = advance(state, generate_therapist_turn(state, config, *backends.therapist, clock));
      }
    } catch (const Error& e) {
      if (!is_backend_failure(e)) throw;
      run.outcome = RunOutcome::kBackendError;
      run.failed_stage = stage;
      run.error = e.what();
      break;
    }
  }
  run.transcript = state.transcript;
  return run;
}

std::vector<DialogueRun> run_batch(const std::vector<SeedCase>& seeds, const BackendFactory& factory,
                                   const SimulationConfig& config, int parallelism) {
  if (parallelism < 1) throw Error(ErrorCode::kInvalidConfig, "parallelism must be >= 1");
  validate_config(config);
  std::vector<DialogueRun> results(seeds.size());
  std::atomic<size_t> next{0};

  auto worker = [&] {
    for (size_t i = next.fetch_add(1); i < seeds.size(); i = next.fetch_add(1)) {
      try {
        results[i] = run_dialogue(seeds[i], factory(seeds[i], i), config);
      } catch (const std::exception& e) {
        DialogueRun failed;
        failed.transcript.session_id = config.session_prefix + seeds[i].case_id;
        failed.transcript.seed = seeds[i];
        failed.adversarial = config.adversarial_case_ids.contains(seeds[i].case_id);
        failed.model_tag = config.therapist_tag;
        failed.outcome = RunOutcome::kAborted;
        failed.error = e.what();
        results[i] = std::move(failed);
      }
    }
  };

  const size_t threads = std::min<size_t>(static_cast<size_t>(parallelism), std::max<size_t>(seeds.size(), 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return results;
}

std::set<std::string> sample_case_ids(const std::vector<std::string>& ids, size_t k, std::uint64_t seed) {
  if (k > ids.size()) {
    throw Error(ErrorCode::kCountOverflow,
                "cannot sample " + std::to_string(k) + " of " + std::to_string(ids.size()) + " ids");
  }
  std::vector<std::string> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  seeded_shuffle(sorted, seed);
  return {sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k)};
}

}  // namespace reframe

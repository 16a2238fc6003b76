#include "reframe/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "reframe/error.hpp"
#include "reframe/io.hpp"

namespace reframe {

namespace {

using nlohmann::json;

SeedCase live_seed(const std::string& session_id) {
  // Live clients bring their own situation; the prompts still need both fields.
  return SeedCase{session_id, "unspecified", "(shared by the client during the conversation)", SeedSource::kUser};
}

ServiceError not_found(const std::string& id) { return ServiceError(404, "NotFound", "no session '" + id + "'"); }

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidRequest:
    case ErrorCode::kInvalidSeed:
    case ErrorCode::kIncompleteResponse:
    case ErrorCode::kOutOfRange:
    case ErrorCode::kMissingField:
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kPhaseMismatch:
    case ErrorCode::kClientMismatch:
      return 400;
    case ErrorCode::kWrongRole:
    case ErrorCode::kWrongStage:
    case ErrorCode::kSessionClosed:
      return 409;
    case ErrorCode::kTimeout:
    case ErrorCode::kBadStatus:
    case ErrorCode::kExhaustedScript:
    case ErrorCode::kMissingApiKey:
      return 502;
    default:
      return 500;
  }
}

json error_body(const std::string& code, const std::string& message) {
  return json{{"code", code}, {"message", message}};
}

json turn_public_json(const Turn& t) {
  return json{{"role", to_string(t.role)},
              {"stage", static_cast<int>(t.stage)},
              {"text", t.text},
              {"timestamp", format_utc(t.timestamp)}};
}

json scores_json(const SubscaleScores& s) {
  return json{{"positive_total", s.positive_total}, {"negative_total", s.negative_total}};
}

}  // namespace

// ---- event log ----

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kSessionCreated: return "session_created";
    case EventKind::kTurnAdded: return "turn_added";
    case EventKind::kPanasSubmitted: return "panas_submitted";
    case EventKind::kScoreRecorded: return "score_recorded";
    case EventKind::kBatchCompleted: return "batch_completed";
  }
  return "?";
}

EventKind parse_event_kind(std::string_view text) {
  for (auto k : {EventKind::kSessionCreated, EventKind::kTurnAdded, EventKind::kPanasSubmitted,
                 EventKind::kScoreRecorded, EventKind::kBatchCompleted}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::kCorruptEntry, "unknown event kind '" + std::string(text) + "'");
}

json entry_to_json(const EventLogEntry& e) {
  return json{{"seq", e.seq}, {"kind", to_string(e.kind)}, {"at", format_utc(e.at)}, {"payload", e.payload}};
}

LogReadResult read_event_log(const std::filesystem::path& path) {
  LogReadResult result;
  if (!std::filesystem::exists(path)) return result;
  const std::string data = read_text_file(path);
  size_t pos = 0;
  std::uint64_t last_seq = 0;
  while (pos < data.size()) {
    const size_t nl = data.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = data.substr(pos, complete ? nl - pos : std::string::npos);
    const size_t next = complete ? nl + 1 : data.size();
    const bool last = next >= data.size();
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      if (complete) result.intact_bytes = next;
      pos = next;
      continue;
    }
    EventLogEntry entry;
    bool ok = complete;
    if (ok) {
      try {
        const json j = json::parse(line);
        entry.seq = j.at("seq").get<std::uint64_t>();
        entry.kind = parse_event_kind(j.at("kind").get<std::string>());
        entry.at = parse_utc(j.at("at").get<std::string>());
        entry.payload = j.at("payload");
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      if (last) {
        result.torn_tail = true;
        result.warning = "dropped torn final entry after seq " + std::to_string(last_seq) + " in " + path.string();
        break;
      }
      throw Error(ErrorCode::kCorruptEntry, "seq " + std::to_string(last_seq + 1) + ": unreadable entry in " +
                                                path.string() + " at byte " + std::to_string(pos));
    }
    if (entry.seq <= last_seq) {
      throw Error(ErrorCode::kCorruptEntry, "seq " + std::to_string(entry.seq) + " does not follow " +
                                                std::to_string(last_seq) + " in " + path.string());
    }
    last_seq = entry.seq;
    result.entries.push_back(std::move(entry));
    result.intact_bytes = next;
    pos = next;
  }
  return result;
}

EventLog::EventLog(std::filesystem::path path, Clock clock) : path_(std::move(path)), clock_(std::move(clock)) {
  recovered_ = read_event_log(path_);
  if (recovered_.torn_tail) {
    std::error_code ec;
    std::filesystem::resize_file(path_, recovered_.intact_bytes, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot truncate torn tail of " + path_.string() + ": " + ec.message());
  }
  if (!recovered_.entries.empty()) last_seq_ = recovered_.entries.back().seq;
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw Error(ErrorCode::kIo, "cannot open " + path_.string() + " for append");
}

EventLogEntry EventLog::append(EventKind kind, json payload) {
  std::lock_guard lock(mutex_);
  EventLogEntry entry{last_seq_ + 1, kind, std::move(payload), clock_()};
  out_ << entry_to_json(entry).dump() << '\n';
  out_.flush();
  if (!out_) throw Error(ErrorCode::kIo, "append to " + path_.string() + " failed");
  last_seq_ = entry.seq;
  return entry;
}

std::uint64_t EventLog::last_seq() const {
  std::lock_guard lock(mutex_);
  return last_seq_;
}

// ---- config ----

std::string_view to_string(SessionPhase phase) {
  switch (phase) {
    case SessionPhase::kIntro: return "intro";
    case SessionPhase::kChat: return "chat";
    case SessionPhase::kPanasPost: return "panas_post";
    case SessionPhase::kReport: return "report";
  }
  return "?";
}

ServiceConfig load_service_config(const json& j) {
  ServiceConfig c;
  try {
    c.port = j.value("port", c.port);
    c.host = j.value("host", c.host);
    c.data_dir = j.value("data_dir", c.data_dir.string());
    if (j.contains("bearer_token") && !j.at("bearer_token").is_null()) {
      c.bearer_token = j.at("bearer_token").get<std::string>();
    }
    if (j.contains("backends")) {
      for (const auto& [ref, b] : j.at("backends").items()) {
        c.backends[ref] = BackendRef{b.get<BackendConfig>(), b.value("model_tag", ref)};
      }
    }
    c.default_backend = j.value("default_backend", c.default_backend);
    c.client_backend = j.value("client_backend", c.client_backend);
    c.model_tag_hidden = j.value("model_tag_hidden", c.model_tag_hidden);
    c.control_wait = std::chrono::seconds(j.value("control_wait_seconds", 1800));
    c.rounds = j.value("rounds", c.rounds);
    c.panas_time_frame = j.value("panas_time_frame", c.panas_time_frame);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("service config: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw Error(ErrorCode::kInvalidConfig, "port out of range");
  if (c.rounds < 1 || c.rounds > kMaxRounds) throw Error(ErrorCode::kInvalidConfig, "rounds must be in 1..3");
  if (!c.backends.empty() && !c.backends.contains(c.default_backend)) {
    throw Error(ErrorCode::kInvalidConfig, "default_backend '" + c.default_backend + "' is not configured");
  }
  if (!c.client_backend.empty() && !c.backends.contains(c.client_backend)) {
    throw Error(ErrorCode::kInvalidConfig, "client_backend '" + c.client_backend + "' is not configured");
  }
  return c;
}

ServiceConfig load_service_config_file(const std::filesystem::path& path) {
  const json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::kInvalidConfig, path.string() + " is not a JSON object");
  return load_service_config(j);
}

void apply_env_overrides(ServiceConfig& config) {
  if (const char* port = std::getenv("PORT"); port && *port) {
    try {
      config.port = std::stoi(port);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidConfig, std::string("PORT='") + port + "'");
    }
  }
  if (const char* dir = std::getenv("DATA_DIR"); dir && *dir) config.data_dir = dir;
}

void prepare_data_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  for (const char* sub : {"", "sessions", "corpora", "scores", "reports"}) {
    std::filesystem::create_directories(dir / sub, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + (dir / sub).string() + ": " + ec.message());
  }
  const auto probe = dir / ".write-probe";
  write_text_file(probe, "");
  std::filesystem::remove(probe, ec);
}

// ---- sessions ----

ServiceError::ServiceError(int status, std::string code, const std::string& message)
    : std::runtime_error(code + ": " + message), status_(status), code_(std::move(code)), message_(message) {}

SessionPhase session_phase(const SessionRecord& r) {
  if (r.panas_post) return SessionPhase::kReport;
  switch (r.mode()) {
    case SessionMode::kControl:
      return r.panas_pre ? SessionPhase::kPanasPost : SessionPhase::kIntro;
    case SessionMode::kSimulated:
      return r.state.status == SessionStatus::kOpen ? SessionPhase::kChat : SessionPhase::kReport;
    case SessionMode::kLive:
      break;
  }
  if (!r.panas_pre) return SessionPhase::kIntro;
  return r.state.status == SessionStatus::kOpen ? SessionPhase::kChat : SessionPhase::kPanasPost;
}

json session_internal_json(const SessionRecord& r) {
  json j{{"session_id", r.session_id},
         {"state", r.state},
         {"backend_ref", r.backend_ref},
         {"model_tag", r.model_tag},
         {"model_tag_hidden", r.model_tag_hidden},
         {"idempotency", r.idempotency},
         {"phase", to_string(session_phase(r))}};
  j["panas_pre"] = r.panas_pre ? json(*r.panas_pre) : json(nullptr);
  j["panas_post"] = r.panas_post ? json(*r.panas_post) : json(nullptr);
  return j;
}

json session_public_json(const SessionRecord& r, const std::string& guidance) {
  json turns = json::array();
  for (const auto& t : r.state.transcript.turns) turns.push_back(turn_public_json(t));
  const SessionPhase phase = session_phase(r);
  json j{{"session_id", r.session_id},
         {"mode", to_string(r.mode())},
         {"phase", to_string(phase)},
         {"status", to_string(r.state.status)},
         {"stage", static_cast<int>(r.state.current_stage)},
         {"round", static_cast<int>(r.state.current_stage)},
         {"rounds", r.state.rounds},
         {"awaiting", to_string(r.state.awaiting)},
         {"turns", std::move(turns)},
         {"panas", {{"pre", r.panas_pre.has_value()}, {"post", r.panas_post.has_value()}}}};
  if (phase == SessionPhase::kIntro) j["guidance"] = guidance;
  if (!r.model_tag_hidden) j["model_tag"] = r.model_tag;
  return j;
}

SessionStore::SessionStore(ServiceConfig config, StoreOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
  if (!options_.clock) options_.clock = system_clock();
  if (!options_.resolver) {
    options_.resolver = [](const std::string&, const BackendRef& ref) { return make_backend(ref.config); };
  }
  if (!options_.wait_gate) {
    options_.wait_gate = [wait = config_.control_wait](Timestamp pre, Timestamp now) { return now - pre >= wait; };
  }
  prepare_data_dir(config_.data_dir);
  log_ = std::make_unique<EventLog>(config_.data_dir / "events.jsonl", options_.clock);
  if (log_->recovered().torn_tail) std::cerr << "warning: " << log_->recovered().warning << "\n";
  for (const auto& entry : log_->recovered().entries) {
    try {
      apply(entry);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kCorruptEntry) throw;
      throw Error(ErrorCode::kCorruptEntry, "seq " + std::to_string(entry.seq) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kCorruptEntry, "seq " + std::to_string(entry.seq) + ": " + e.what());
    }
  }
}

void SessionStore::apply(const EventLogEntry& entry) {
  const json& p = entry.payload;
  switch (entry.kind) {
    case EventKind::kSessionCreated: {
      auto s = std::make_shared<Slot>();
      auto& r = s->record;
      r.session_id = p.at("session_id").get<std::string>();
      const auto mode = parse_session_mode(p.at("mode").get<std::string>());
      r.state = new_session(p.at("seed").get<SeedCase>(), mode, r.session_id, p.value("rounds", kDefaultRounds));
      r.backend_ref = p.value("backend_ref", std::string());
      r.model_tag = p.value("model_tag", std::string());
      r.model_tag_hidden = p.value("model_tag_hidden", true);
      std::lock_guard lock(mutex_);
      if (!sessions_.emplace(r.session_id, s).second) {
        throw Error(ErrorCode::kDuplicateId, "session '" + r.session_id + "' created twice");
      }
      break;
    }
    case EventKind::kTurnAdded: {
      auto s = slot(p.at("session_id").get<std::string>());
      auto& r = s->record;
      SessionState state = r.state;
      for (const auto& t : p.at("turns")) state = advance(state, t.get<Turn>());
      r.state = std::move(state);
      if (p.contains("idempotency_key")) r.idempotency[p.at("idempotency_key").get<std::string>()] = r.state.transcript.turns.size() - 1;
      break;
    }
    case EventKind::kPanasSubmitted: {
      auto s = slot(p.at("session_id").get<std::string>());
      auto response = p.at("response").get<PanasResponse>();
      validate_response(response);
      (response.phase == PanasPhase::kPre ? s->record.panas_pre : s->record.panas_post) = std::move(response);
      break;
    }
    case EventKind::kScoreRecorded: {
      std::lock_guard lock(mutex_);
      scores_.push_back(p.at("record").get<EvaluatorRecord>());
      break;
    }
    case EventKind::kBatchCompleted: {
      std::lock_guard lock(mutex_);
      ++batches_;
      break;
    }
  }
}

std::shared_ptr<SessionStore::Slot> SessionStore::slot(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw not_found(session_id);
  return it->second;
}

std::shared_ptr<ChatBackend> SessionStore::backend(const std::string& ref) {
  std::lock_guard lock(mutex_);
  if (auto it = backends_.find(ref); it != backends_.end()) return it->second;
  const auto cfg = config_.backends.find(ref);
  if (cfg == config_.backends.end()) throw ServiceError(400, "UnknownBackend", "no backend '" + ref + "'");
  auto made = options_.resolver(ref, cfg->second);
  backends_[ref] = made;
  return made;
}

SimulationConfig SessionStore::simulation_for(const SessionRecord& record) const {
  SimulationConfig sim = options_.simulation;
  sim.rounds = record.state.rounds;
  sim.therapist_tag = record.model_tag;
  if (const auto it = config_.backends.find(record.backend_ref); it != config_.backends.end()) {
    sim.therapist_model = it->second.config.model_id;
  }
  return sim;
}

SessionRecord SessionStore::create_session(const CreateSessionRequest& request) {
  const std::string id = generate_session_id();
  SeedCase seed = request.seed.value_or(live_seed(id));
  if (seed.case_id.empty()) seed.case_id = id;
  try {
    validate_seed(seed);
  } catch (const Error& e) {
    throw ServiceError(400, std::string(e.name()), e.message());
  }
  std::string ref;
  std::string tag;
  if (request.mode != SessionMode::kControl) {
    ref = request.backend_ref.empty() ? config_.default_backend : request.backend_ref;
    const auto it = config_.backends.find(ref);
    if (it == config_.backends.end()) throw ServiceError(400, "UnknownBackend", "no backend '" + ref + "'");
    tag = it->second.model_tag;
  }
  if (request.mode == SessionMode::kSimulated) {
    if (!request.seed) throw ServiceError(400, "InvalidRequest", "simulated sessions need a seed");
    if (config_.client_backend.empty()) throw ServiceError(400, "UnknownBackend", "no client_backend configured");
  }

  json payload{{"session_id", id},
               {"mode", to_string(request.mode)},
               {"seed", seed},
               {"backend_ref", ref},
               {"model_tag", tag},
               {"model_tag_hidden", config_.model_tag_hidden},
               {"rounds", config_.rounds}};
  apply(log_->append(EventKind::kSessionCreated, std::move(payload)));

  if (request.mode == SessionMode::kSimulated) {
    auto s = slot(id);
    std::lock_guard lock(s->mutex);
    SimulationConfig sim = simulation_for(s->record);
    sim.session_prefix = "";
    sim.timestamps = TimestampMode::kLogical;
    sim.logical_start = options_.clock();
    const DialogueRun run =
        run_dialogue(seed, Backends{backend(config_.client_backend), backend(ref), nullptr}, sim);
    for (size_t i = 0; i < run.transcript.turns.size(); i += 2) {
      json turns = json::array();
      for (size_t k = i; k < std::min(i + 2, run.transcript.turns.size()); ++k) turns.push_back(run.transcript.turns[k]);
      apply(log_->append(EventKind::kTurnAdded, json{{"session_id", id}, {"turns", std::move(turns)}}));
    }
    return s->record;
  }
  return get(id);
}

SessionRecord SessionStore::get(const std::string& session_id) const {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  return s->record;
}

SessionRecord SessionStore::submit_panas(const std::string& session_id, PanasPhase phase,
                                         const std::map<int, int>& answers) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  const SessionRecord& r = s->record;
  PanasResponse response{session_id, phase, answers, options_.clock()};
  try {
    validate_response(response);
  } catch (const Error& e) {
    throw ServiceError(400, std::string(e.name()), e.message());
  }
  if (r.mode() == SessionMode::kSimulated) {
    throw ServiceError(409, "WrongMode", "simulated sessions take no questionnaire");
  }
  if (phase == PanasPhase::kPre) {
    if (!r.state.transcript.turns.empty() || r.panas_post) {
      throw ServiceError(409, "PhaseMismatch", "the pre questionnaire closes once the session has started");
    }
  } else {
    if (!r.panas_pre) throw ServiceError(409, "PanasPreRequired", "submit the pre questionnaire first");
    if (r.mode() == SessionMode::kLive && r.state.status == SessionStatus::kOpen) {
      throw ServiceError(409, "ChatIncomplete", "the post questionnaire opens after the last round");
    }
    if (r.mode() == SessionMode::kControl && !options_.wait_gate(r.panas_pre->completed_at, response.completed_at)) {
      throw ServiceError(409, "WaitGateClosed", "the post questionnaire is not open yet");
    }
  }
  apply(log_->append(EventKind::kPanasSubmitted, json{{"session_id", session_id}, {"response", response}}));
  return s->record;
}

MessageReply SessionStore::post_message(const std::string& session_id, const std::string& text,
                                        const std::optional<std::string>& idempotency_key) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  const SessionRecord& r = s->record;
  if (idempotency_key) {
    if (const auto it = r.idempotency.find(*idempotency_key); it != r.idempotency.end()) {
      const Turn& t = r.state.transcript.turns.at(it->second);
      return MessageReply{t.text, t.stage, static_cast<int>(t.stage), session_phase(r), true};
    }
  }
  if (r.mode() != SessionMode::kLive) throw ServiceError(409, "WrongMode", "only live sessions take messages");
  if (!r.panas_pre) throw ServiceError(409, "PanasPreRequired", "submit the pre questionnaire first");
  if (r.state.status != SessionStatus::kOpen) {
    throw ServiceError(409, "SessionComplete", "all " + std::to_string(r.state.rounds) + " rounds are done");
  }
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ServiceError(400, "InvalidRequest", "message text is empty");
  }

  const Stage stage = r.state.current_stage;
  SessionState next = advance(r.state, Turn{Role::kClient, stage, text, options_.clock(), 1, TurnReview::kNone, std::nullopt});
  const Turn reply = generate_therapist_turn(next, simulation_for(r), *backend(r.backend_ref), options_.clock);
  next = advance(next, reply);

  json payload{{"session_id", session_id}, {"turns", json::array({next.transcript.turns[next.transcript.turns.size() - 2], reply})}};
  if (idempotency_key) payload["idempotency_key"] = *idempotency_key;
  apply(log_->append(EventKind::kTurnAdded, std::move(payload)));
  return MessageReply{reply.text, stage, static_cast<int>(stage), session_phase(s->record), false};
}

json SessionStore::report(const std::string& session_id) const {
  const SessionRecord r = get(session_id);
  if (!r.panas_pre || !r.panas_post) {
    throw ServiceError(409, "ReportNotReady", "both questionnaires are needed for a report");
  }
  const auto& pre = *r.panas_pre;
  const auto& post = *r.panas_post;
  const PanasDelta d = delta(pre, post);
  json items = json::object();
  for (const auto& item : panas_items()) items[std::string(item.label)] = d.at(item.index);
  return json{{"session_id", r.session_id},
              {"pre", scores_json(score(pre))},
              {"post", scores_json(score(post))},
              {"delta", {{"items", std::move(items)}, {"positive", d.positive}, {"negative", d.negative}}},
              {"negative_fluctuation", negative_fluctuation(pre, post)},
              {"negative_delta_stddev", client_negative_delta_stddev(pre, post)},
              {"radar",
               {{"positive", radar_to_json(radar_data(pre, post, Polarity::kPositive))},
                {"negative", radar_to_json(radar_data(pre, post, Polarity::kNegative))}}}};
}

void SessionStore::record_score(const EvaluatorRecord& record) {
  apply(log_->append(EventKind::kScoreRecorded, json{{"record", record}}));
}

void SessionStore::record_batch(const json& summary) {
  apply(log_->append(EventKind::kBatchCompleted, json{{"summary", summary}}));
}

std::vector<EvaluatorRecord> SessionStore::scores() const {
  std::lock_guard lock(mutex_);
  return scores_;
}

json SessionStore::snapshot() const {
  std::vector<std::shared_ptr<Slot>> slots;
  json out{{"sessions", json::array()}};
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, s] : sessions_) slots.push_back(s);
    out["scores"] = scores_;
    out["batches"] = batches_;
  }
  for (const auto& s : slots) {
    std::lock_guard lock(s->mutex);
    out["sessions"].push_back(session_internal_json(s->record));
  }
  return out;
}

std::string SessionStore::guidance() const { return panas_guidance(config_.panas_time_frame); }

// ---- HTTP ----

HttpService::HttpService(SessionStore& store) : store_(store), server_(std::make_unique<httplib::Server>()) {
  routes();
}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

bool HttpService::listen(const std::string& host, int port) { return server_->listen(host, port); }

void HttpService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void HttpService::routes() {
  auto& srv = *server_;
  auto send = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };

  // Every handler runs inside this wrapper: auth, JSON errors, {code, message} bodies.
  auto guarded = [this, send](std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    return [this, send, handler](const httplib::Request& req, httplib::Response& res) {
      const auto& token = store_.config().bearer_token;
      if (token && req.get_header_value("Authorization") != "Bearer " + *token) {
        send(res, 401, error_body("Unauthorized", "missing or wrong bearer token"));
        return;
      }
      try {
        handler(req, res);
      } catch (const ServiceError& e) {
        send(res, e.status(), error_body(e.code(), e.message()));
      } catch (const GatewayError& e) {
        send(res, 502, error_body(std::string(e.name()), e.message()));
      } catch (const Error& e) {
        send(res, status_for(e.code()), error_body(std::string(e.name()), e.message()));
      } catch (const json::exception& e) {
        send(res, 400, error_body("InvalidRequest", e.what()));
      } catch (const std::exception& e) {
        send(res, 500, error_body("Internal", e.what()));
      }
    };
  };
  auto body_of = [](const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ServiceError(400, "InvalidRequest", "body must be a JSON object");
    return j;
  };

  srv.Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, 200, json{{"status", "ok"}, {"sessions", store_.snapshot()["sessions"].size()}});
  });

  srv.Get("/guidance", guarded([this, send](const httplib::Request&, httplib::Response& res) {
    send(res, 200, json{{"guidance", store_.guidance()}});
  }));

  srv.Post("/sessions", guarded([this, send, body_of](const httplib::Request& req, httplib::Response& res) {
    const json body = body_of(req);
    CreateSessionRequest create;
    const std::string mode = body.value("mode", std::string("live"));
    try {
      create.mode = parse_session_mode(mode);
    } catch (const Error&) {
      throw ServiceError(400, "InvalidRequest", "unknown mode '" + mode + "'");
    }
    if (body.contains("seed") && !body.at("seed").is_null()) {
      const auto& sj = body.at("seed");
      create.seed = SeedCase{sj.value("case_id", std::string()), sj.value("thinking_trap", std::string()),
                             sj.value("thought", std::string()), SeedSource::kUser};
    }
    create.backend_ref = body.value("backend_ref", std::string());
    const SessionRecord r = store_.create_session(create);
    send(res, 201, session_public_json(r, store_.guidance()));
  }));

  srv.Get(R"(/sessions/([^/]+))", guarded([this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, 200, session_public_json(store_.get(req.matches[1]), store_.guidance()));
  }));

  srv.Post(R"(/sessions/([^/]+)/panas)",
           guarded([this, send, body_of](const httplib::Request& req, httplib::Response& res) {
             const json body = body_of(req);
             if (!body.contains("phase") || !body.contains("answers")) {
               throw ServiceError(400, "InvalidRequest", "body needs phase and answers");
             }
             PanasResponse parsed = json{{"client_id", std::string(req.matches[1])},
                                         {"phase", body.at("phase")},
                                         {"answers", body.at("answers")}}
                                        .get<PanasResponse>();
             const SessionRecord r = store_.submit_panas(req.matches[1], parsed.phase, parsed.answers);
             send(res, 200, session_public_json(r, store_.guidance()));
           }));

  srv.Post(R"(/sessions/([^/]+)/messages)",
           guarded([this, send, body_of](const httplib::Request& req, httplib::Response& res) {
             const json body = body_of(req);
             if (!body.contains("text") || !body.at("text").is_string()) {
               throw ServiceError(400, "InvalidRequest", "body needs text");
             }
             std::optional<std::string> key;
             if (body.contains("idempotency_key")) key = body.at("idempotency_key").get<std::string>();
             if (!key && req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
             const MessageReply reply = store_.post_message(req.matches[1], body.at("text").get<std::string>(), key);
             send(res, 200, json{{"therapist_reply", reply.therapist_reply},
                                 {"stage", static_cast<int>(reply.stage)},
                                 {"round", reply.round},
                                 {"phase", to_string(reply.phase)},
                                 {"replayed", reply.replayed}});
           }));

  srv.Get(R"(/sessions/([^/]+)/report)", guarded([this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, 200, store_.report(req.matches[1]));
  }));

  srv.Post("/scores", guarded([this, send, body_of](const httplib::Request& req, httplib::Response& res) {
    const json body = body_of(req);
    store_.record_score(body.get<EvaluatorRecord>());
    send(res, 201, json{{"recorded", true}});
  }));
}

}  // namespace reframe

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "reframe/gateway.hpp"
#include "reframe/panas.hpp"
#include "reframe/protocol.hpp"
#include "reframe/rubric.hpp"
#include "reframe/simulation.hpp"
#include "reframe/time.hpp"

namespace httplib {
class Server;
}

namespace reframe {

// ---- event log ----

enum class EventKind { kSessionCreated, kTurnAdded, kPanasSubmitted, kScoreRecorded, kBatchCompleted };

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view text);

struct EventLogEntry {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::kSessionCreated;
  nlohmann::json payload;
  Timestamp at{};

  friend bool operator==(const EventLogEntry&, const EventLogEntry&) = default;
};

nlohmann::json entry_to_json(const EventLogEntry& entry);

struct LogReadResult {
  std::vector<EventLogEntry> entries;
  bool torn_tail = false;
  std::uint64_t intact_bytes = 0;  // length of the prefix holding whole entries
  std::string warning;
};

// A final line without its newline, or one that does not parse, is a torn write and is
// dropped. Any earlier bad line, or a seq that does not increase, throws CorruptEntry.
LogReadResult read_event_log(const std::filesystem::path& path);

// Single-writer append-only JSONL log. Opening truncates a torn tail.
class EventLog {
 public:
  EventLog(std::filesystem::path path, Clock clock);

  // Entries already on disk when the log was opened.
  const LogReadResult& recovered() const { return recovered_; }

  EventLogEntry append(EventKind kind, nlohmann::json payload);
  std::uint64_t last_seq() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  Clock clock_;
  LogReadResult recovered_;
  mutable std::mutex mutex_;
  std::ofstream out_;
  std::uint64_t last_seq_ = 0;
};

// ---- sessions ----

// The server reports intro until the pre questionnaire arrives; the UI splits that
// into its guidance screen and the form.
enum class SessionPhase { kIntro, kChat, kPanasPost, kReport };

std::string_view to_string(SessionPhase phase);

// A named therapist model. The tag is what evaluation sees; clients never do when hidden.
struct BackendRef {
  BackendConfig config;
  std::string model_tag;
};

struct ServiceConfig {
  int port = 8080;
  std::string host = "127.0.0.1";
  std::filesystem::path data_dir = "data-service";
  std::optional<std::string> bearer_token;
  std::map<std::string, BackendRef> backends;
  std::string default_backend = "default";
  std::string client_backend;  // drives the AI client in simulated sessions
  bool model_tag_hidden = true;
  std::chrono::seconds control_wait{1800};
  int rounds = kDefaultRounds;
  std::string panas_time_frame = "over the past week";
};

// Reads the JSON config; PORT and DATA_DIR in the environment override it.
// Throws InvalidConfig.
ServiceConfig load_service_config(const nlohmann::json& j);
ServiceConfig load_service_config_file(const std::filesystem::path& path);
void apply_env_overrides(ServiceConfig& config);

struct SessionRecord {
  std::string session_id;
  SessionState state;
  std::optional<PanasResponse> panas_pre;
  std::optional<PanasResponse> panas_post;
  std::string backend_ref;
  std::string model_tag;
  bool model_tag_hidden = true;
  std::map<std::string, size_t> idempotency;  // key -> index of the therapist turn it produced

  SessionMode mode() const { return state.transcript.mode; }
};

SessionPhase session_phase(const SessionRecord& record);

// Full internal view, model tag included. Used to compare recovered state.
nlohmann::json session_internal_json(const SessionRecord& record);
// What a client may see; the model tag appears only when not hidden.
nlohmann::json session_public_json(const SessionRecord& record, const std::string& guidance);

// Error surfaced to HTTP callers as {code, message} with the given status.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message);
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  int status_;
  std::string code_;
  std::string message_;
};

struct CreateSessionRequest {
  SessionMode mode = SessionMode::kLive;
  std::optional<SeedCase> seed;
  std::string backend_ref;  // empty: config default
};

struct MessageReply {
  std::string therapist_reply;
  Stage stage = Stage::kSeparateFactsFeelings;
  int round = 1;
  SessionPhase phase = SessionPhase::kChat;
  bool replayed = false;  // idempotency key seen before
};

using BackendResolver = std::function<std::shared_ptr<ChatBackend>(const std::string& ref, const BackendRef&)>;
// Returns true once the post questionnaire may be taken.
using WaitGate = std::function<bool(Timestamp pre_completed, Timestamp now)>;

struct StoreOptions {
  Clock clock = system_clock();
  BackendResolver resolver;  // default: make_backend(config)
  WaitGate wait_gate;        // default: now - pre >= control_wait
  SimulationConfig simulation;
};

// Session state built only from the event log. Writes go to the log before memory.
class SessionStore {
 public:
  SessionStore(ServiceConfig config, StoreOptions options = {});

  const ServiceConfig& config() const { return config_; }
  const LogReadResult& recovery() const { return log_->recovered(); }

  SessionRecord create_session(const CreateSessionRequest& request);
  SessionRecord get(const std::string& session_id) const;
  SessionRecord submit_panas(const std::string& session_id, PanasPhase phase, const std::map<int, int>& answers);
  MessageReply post_message(const std::string& session_id, const std::string& text,
                            const std::optional<std::string>& idempotency_key);
  nlohmann::json report(const std::string& session_id) const;

  void record_score(const EvaluatorRecord& record);
  void record_batch(const nlohmann::json& summary);
  std::vector<EvaluatorRecord> scores() const;

  // Every session plus scores, sorted; identical before and after a restart.
  nlohmann::json snapshot() const;
  std::string guidance() const;

 private:
  struct Slot {
    std::mutex mutex;  // serializes operations on one session
    SessionRecord record;
  };

  void apply(const EventLogEntry& entry);
  std::shared_ptr<Slot> slot(const std::string& session_id) const;
  std::shared_ptr<ChatBackend> backend(const std::string& ref);
  SimulationConfig simulation_for(const SessionRecord& record) const;

  ServiceConfig config_;
  StoreOptions options_;
  std::unique_ptr<EventLog> log_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::vector<EvaluatorRecord> scores_;
  size_t batches_ = 0;
  std::map<std::string, std::shared_ptr<ChatBackend>> backends_;
};

// Creates events.jsonl's directory plus sessions/, corpora/, scores/, reports/.
// Throws IoError when the directory cannot be written.
void prepare_data_dir(const std::filesystem::path& dir);

// ---- HTTP ----

class HttpService {
 public:
  explicit HttpService(SessionStore& store);
  ~HttpService();

  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Binds and serves on a background thread; returns the bound port (port 0 picks one).
  int start(const std::string& host, int port);
  // Serves on the calling thread until stop().
  bool listen(const std::string& host, int port);
  void stop();

 private:
  void routes();

  SessionStore& store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace reframe

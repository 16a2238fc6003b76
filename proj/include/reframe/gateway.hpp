#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "reframe/error.hpp"
#include "reframe/protocol.hpp"

namespace reframe {

// Chat-completion gateway: one request/response shape shared by every
// LLM-facing operation, with an HTTP backend and a scripted stand-in.

enum class MessageRole { kSystem, kUser, kAssistant };

std::string_view to_string(MessageRole role);
MessageRole parse_message_role(std::string_view text);

struct ChatMessage {
  MessageRole role = MessageRole::kUser;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

inline constexpr double kGenerationTemperature = 0.7;
inline constexpr double kScoringTemperature = 0.0;

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  double temperature = kGenerationTemperature;
  int max_tokens = 512;
  std::string model_id = "default";
};

// Throws InvalidRequest: empty messages, temperature outside [0, 2], max_tokens < 1,
// a system message after the first position, or empty non-assistant content.
void validate_request(const CompletionRequest& request);

// The chat-completions wire body: {"model","messages":[{"role","content"}],"temperature","max_tokens"}.
nlohmann::json to_wire(const CompletionRequest& request);
// Extracts choices[0].message; throws BadStatus with parse detail on any shape mismatch.
ChatMessage from_wire(const std::string& body);

enum class BackendKind { kHttp, kScripted };

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{500};
  bool jitter = true;
};

struct BackendConfig {
  BackendKind kind = BackendKind::kScripted;
  std::string endpoint_url;  // http only
  std::string model_id = "default";
  std::chrono::milliseconds timeout{30000};
  RetryPolicy retry;
  std::string api_key_env = "OPENAI_API_KEY";  // empty: send no Authorization header
  int max_in_flight = 4;
  std::vector<std::string> script;  // scripted only
  std::optional<std::filesystem::path> audit_log;
};

// Throws InvalidConfig when an http backend lacks an endpoint or a count is out of range.
void validate_config(const BackendConfig& config);

void to_json(nlohmann::json& j, const BackendConfig& config);
void from_json(const nlohmann::json& j, BackendConfig& config);

class GatewayError : public Error {
 public:
  GatewayError(ErrorCode code, const std::string& message, std::string correlation_id, int status = 0);

  const std::string& correlation_id() const noexcept { return correlation_id_; }
  // HTTP status for BadStatus; 0 when the failure happened below HTTP.
  int status() const noexcept { return status_; }

 private:
  std::string correlation_id_;
  int status_;
};

std::string new_correlation_id();

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatMessage complete(const CompletionRequest& request) = 0;
};

// Request/response pairs as JSONL. Occurrences of any registered secret are masked.
class AuditLog {
 public:
  explicit AuditLog(const std::filesystem::path& path);

  void add_secret(std::string secret);
  void record(nlohmann::json entry);

 private:
  std::mutex mutex_;
  std::ofstream out_;
  std::vector<std::string> secrets_;
};

// Replays queued replies in order. Exhaustion raises ExhaustedScript; it never wraps.
class ScriptedBackend final : public ChatBackend {
 public:
  struct Failure {
    ErrorCode code = ErrorCode::kBadStatus;
    std::string message = "scripted failure";
  };
  using Entry = std::variant<std::string, Failure>;

  explicit ScriptedBackend(std::vector<std::string> replies);
  explicit ScriptedBackend(std::vector<Entry> entries);

  ChatMessage complete(const CompletionRequest& request) override;

  size_t cursor() const;
  size_t remaining() const;
  std::vector<CompletionRequest> requests() const;

 private:
  mutable std::mutex mutex_;
  std::vector<Entry> entries_;
  size_t cursor_ = 0;
  std::vector<CompletionRequest> requests_;
};

class HttpBackend final : public ChatBackend {
 public:
  explicit HttpBackend(BackendConfig config, std::shared_ptr<AuditLog> audit = nullptr);

  ChatMessage complete(const CompletionRequest& request) override;

 private:
  std::string resolve_api_key(const std::string& correlation_id) const;

  BackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::shared_ptr<AuditLog> audit_;
  std::counting_semaphore<> in_flight_;
};

std::shared_ptr<ChatBackend> make_backend(const BackendConfig& config);

// Whose side of the dialogue the model is playing. The other side's turns become
// user messages; the model's own earlier turns become assistant messages.
enum class Perspective { kClient, kTherapist };

std::vector<ChatMessage> build_messages(std::string_view system_prompt, const Transcript& history,
                                        std::string_view next_prompt, Perspective perspective);

}  // namespace reframe

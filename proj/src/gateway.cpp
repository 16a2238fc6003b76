#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "reframe/gateway.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <httplib.h>

namespace reframe {

namespace {

using nlohmann::json;
using std::chrono::milliseconds;

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

std::string backend_kind_name(BackendKind kind) { return kind == BackendKind::kHttp ? "http" : "scripted"; }

milliseconds backoff_delay(const RetryPolicy& retry, int attempt) {
  const double base = static_cast<double>(retry.backoff_base.count()) * std::pow(2.0, attempt - 1);
  if (!retry.jitter) return milliseconds(static_cast<long long>(base));
  thread_local std::mt19937_64 rng{std::random_device{}()};
  std::uniform_real_distribution<double> factor(0.5, 1.0);
  return milliseconds(static_cast<long long>(base * factor(rng)));
}

json request_audit_view(const CompletionRequest& request) { return to_wire(request); }

}  // namespace

std::string_view to_string(MessageRole role) {
  switch (role) {
    case MessageRole::kSystem: return "system";
    case MessageRole::kUser: return "user";
    case MessageRole::kAssistant: return "assistant";
  }
  return "?";
}

MessageRole parse_message_role(std::string_view text) {
  if (text == "system") return MessageRole::kSystem;
  if (text == "user") return MessageRole::kUser;
  if (text == "assistant") return MessageRole::kAssistant;
  throw Error(ErrorCode::kInvalidRequest, "unknown message role '" + std::string(text) + "'");
}

void validate_request(const CompletionRequest& request) {
  if (request.messages.empty()) throw Error(ErrorCode::kInvalidRequest, "request has no messages");
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0)) {
    throw Error(ErrorCode::kInvalidRequest, "temperature must be within [0, 2]");
  }
  if (request.max_tokens < 1) throw Error(ErrorCode::kInvalidRequest, "max_tokens must be positive");
  for (size_t i = 0; i < request.messages.size(); ++i) {
    const auto& m = request.messages[i];
    if (m.role == MessageRole::kSystem && i != 0) {
      throw Error(ErrorCode::kInvalidRequest, "system message allowed only first");
    }
    if (m.content.empty() && m.role != MessageRole::kAssistant) {
      throw Error(ErrorCode::kInvalidRequest, "message " + std::to_string(i) + " has empty content");
    }
  }
}

json to_wire(const CompletionRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  return json{{"model", request.model_id},
              {"messages", std::move(messages)},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens}};
}

ChatMessage from_wire(const std::string& body) {
  json parsed = json::parse(body, nullptr, false);
  if (parsed.is_discarded()) throw Error(ErrorCode::kBadStatus, "response body is not JSON");
  try {
    const auto& message = parsed.at("choices").at(0).at("message");
    ChatMessage out;
    out.role = parse_message_role(message.value("role", std::string("assistant")));
    const auto& content = message.at("content");
    out.content = content.is_null() ? std::string() : content.get<std::string>();
    if (out.role != MessageRole::kAssistant) {
      throw Error(ErrorCode::kBadStatus, "reply role is " + std::string(to_string(out.role)));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadStatus, std::string("unexpected response shape: ") + e.what());
  }
}

void validate_config(const BackendConfig& config) {
  if (config.kind == BackendKind::kHttp && config.endpoint_url.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "http backend requires endpoint_url");
  }
  if (config.retry.max_attempts < 1) throw Error(ErrorCode::kInvalidConfig, "retry.max_attempts must be >= 1");
  if (config.max_in_flight < 1) throw Error(ErrorCode::kInvalidConfig, "max_in_flight must be >= 1");
  if (config.timeout.count() <= 0) throw Error(ErrorCode::kInvalidConfig, "timeout must be positive");
}

void to_json(json& j, const BackendConfig& config) {
  j = json{{"kind", backend_kind_name(config.kind)},
           {"model_id", config.model_id},
           {"timeout_ms", config.timeout.count()},
           {"retry", {{"max_attempts", config.retry.max_attempts},
                      {"backoff_base_ms", config.retry.backoff_base.count()},
                      {"jitter", config.retry.jitter}}},
           {"max_in_flight", config.max_in_flight}};
  if (config.kind == BackendKind::kHttp) {
    j["endpoint_url"] = config.endpoint_url;
    j["api_key_env"] = config.api_key_env;
  } else {
    j["script"] = config.script;
  }
  if (config.audit_log) j["audit_log"] = config.audit_log->string();
}

void from_json(const json& j, BackendConfig& config) {
  const std::string kind = j.value("kind", std::string("scripted"));
  if (kind == "http") {
    config.kind = BackendKind::kHttp;
  } else if (kind == "scripted") {
    config.kind = BackendKind::kScripted;
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown backend kind '" + kind + "'");
  }
  config.endpoint_url = j.value("endpoint_url", std::string());
  config.model_id = j.value("model_id", std::string("default"));
  config.timeout = milliseconds(j.value("timeout_ms", 30000));
  if (j.contains("retry")) {
    const auto& r = j.at("retry");
    config.retry.max_attempts = r.value("max_attempts", 3);
    config.retry.backoff_base = milliseconds(r.value("backoff_base_ms", 500));
    config.retry.jitter = r.value("jitter", true);
  }
  config.api_key_env = j.value("api_key_env", std::string("OPENAI_API_KEY"));
  config.max_in_flight = j.value("max_in_flight", 4);
  config.script = j.value("script", std::vector<std::string>{});
  if (j.contains("audit_log")) config.audit_log = j.at("audit_log").get<std::string>();
  validate_config(config);
}

GatewayError::GatewayError(ErrorCode code, const std::string& message, std::string correlation_id, int status)
    : Error(code, message + " [correlation_id=" + correlation_id + "]"),
      correlation_id_(std::move(correlation_id)),
      status_(status) {}

std::string new_correlation_id() {
  static std::atomic<unsigned long long> counter{0};
  thread_local std::mt19937_64 rng{std::random_device{}()};
  char buf[48];
  std::snprintf(buf, sizeof(buf), "req-%06llx-%012llx", counter.fetch_add(1) & 0xffffffULL,
                static_cast<unsigned long long>(rng() & 0xffffffffffffULL));
  return buf;
}

AuditLog::AuditLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw Error(ErrorCode::kIo, "cannot open audit log " + path.string());
}

void AuditLog::add_secret(std::string secret) {
  if (secret.empty()) return;
  std::lock_guard lock(mutex_);
  secrets_.push_back(std::move(secret));
}

void AuditLog::record(json entry) {
  std::string line = entry.dump();
  std::lock_guard lock(mutex_);
  for (const auto& secret : secrets_) {
    for (size_t pos = line.find(secret); pos != std::string::npos; pos = line.find(secret, pos)) {
      line.replace(pos, secret.size(), "[REDACTED]");
    }
  }
  out_ << line << '\n';
  out_.flush();
}

ScriptedBackend::ScriptedBackend(std::vector<std::string> replies) {
  entries_.reserve(replies.size());
  for (auto& r : replies) entries_.emplace_back(std::move(r));
}

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries) : entries_(std::move(entries)) {}

ChatMessage ScriptedBackend::complete(const CompletionRequest& request) {
  const std::string correlation_id = new_correlation_id();
  validate_request(request);
  std::lock_guard lock(mutex_);
  requests_.push_back(request);
  if (cursor_ >= entries_.size()) {
    throw GatewayError(ErrorCode::kExhaustedScript,
                       "scripted backend exhausted after " + std::to_string(entries_.size()) + " replies",
                       correlation_id);
  }
  const Entry& entry = entries_[cursor_++];
  if (const auto* failure = std::get_if<Failure>(&entry)) {
    throw GatewayError(failure->code, failure->message, correlation_id);
  }
  return ChatMessage{MessageRole::kAssistant, std::get<std::string>(entry)};
}

size_t ScriptedBackend::cursor() const {
  std::lock_guard lock(mutex_);
  return cursor_;
}

size_t ScriptedBackend::remaining() const {
  std::lock_guard lock(mutex_);
  return entries_.size() - cursor_;
}

std::vector<CompletionRequest> ScriptedBackend::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

HttpBackend::HttpBackend(BackendConfig config, std::shared_ptr<AuditLog> audit)
    : config_(std::move(config)), audit_(std::move(audit)), in_flight_(std::max(config_.max_in_flight, 1)) {
  validate_config(config_);
  if (config_.kind != BackendKind::kHttp) throw Error(ErrorCode::kInvalidConfig, "HttpBackend needs kind http");
  const std::string& url = config_.endpoint_url;
  const size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kInvalidConfig, "endpoint_url must include a scheme: " + url);
  }
  const size_t path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/v1/chat/completions" : url.substr(path_start);
  if (!audit_ && config_.audit_log) audit_ = std::make_shared<AuditLog>(*config_.audit_log);
}

std::string HttpBackend::resolve_api_key(const std::string& correlation_id) const {
  if (config_.api_key_env.empty()) return {};
  const char* value = std::getenv(config_.api_key_env.c_str());
  if (value == nullptr || *value == '\0') {
    throw GatewayError(ErrorCode::kMissingApiKey, "environment variable " + config_.api_key_env + " is not set",
                       correlation_id);
  }
  return value;
}

ChatMessage HttpBackend::complete(const CompletionRequest& request) {
  const std::string correlation_id = new_correlation_id();
  validate_request(request);
  const std::string api_key = resolve_api_key(correlation_id);
  if (audit_) audit_->add_secret(api_key);

  CompletionRequest wire_request = request;
  if (wire_request.model_id == "default" || wire_request.model_id.empty()) wire_request.model_id = config_.model_id;
  const std::string body = to_wire(wire_request).dump();

  httplib::Headers headers = {{"X-Correlation-Id", correlation_id}};
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<>& sem;
    ~Release() { sem.release(); }
  } release{in_flight_};

  httplib::Client client(scheme_host_port_);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_us).count(),
                                timeout_us.count() % 1000000);
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_us).count(),
                          timeout_us.count() % 1000000);
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_us).count(),
                           timeout_us.count() % 1000000);

  ErrorCode last_code = ErrorCode::kBadStatus;
  std::string last_detail;
  int last_status = 0;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    if (attempt > 1) std::this_thread::sleep_for(backoff_delay(config_.retry, attempt - 1));
    const auto started = std::chrono::steady_clock::now();
    auto result = client.Post(path_, headers, body, "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - started;

    bool retry = true;
    if (!result) {
      const auto err = result.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             (err == httplib::Error::Read && elapsed >= config_.timeout);
      last_code = timed_out ? ErrorCode::kTimeout : ErrorCode::kBadStatus;
      last_status = 0;
      last_detail = "transport error: " + httplib::to_string(err);
    } else if (result->status < 200 || result->status >= 300) {
      last_code = ErrorCode::kBadStatus;
      last_status = result->status;
      last_detail = "HTTP " + std::to_string(result->status);
      retry = retryable_status(result->status);
    } else {
      try {
        ChatMessage reply = from_wire(result->body);
        if (audit_) {
          audit_->record({{"correlation_id", correlation_id},
                          {"at", format_utc(now_utc())},
                          {"attempt", attempt},
                          {"request", request_audit_view(wire_request)},
                          {"response", reply.content}});
        }
        return reply;
      } catch (const Error& e) {
        last_code = ErrorCode::kBadStatus;
        last_status = result->status;
        last_detail = "malformed body: " + e.message();
      }
    }
    if (!retry) break;
  }
  if (audit_) {
    audit_->record({{"correlation_id", correlation_id},
                    {"at", format_utc(now_utc())},
                    {"request", request_audit_view(wire_request)},
                    {"error", std::string(code_name(last_code)) + ": " + last_detail}});
  }
  throw GatewayError(last_code, last_detail, correlation_id, last_status);
}

std::shared_ptr<ChatBackend> make_backend(const BackendConfig& config) {
  validate_config(config);
  if (config.kind == BackendKind::kScripted) return std::make_shared<ScriptedBackend>(config.script);
  return std::make_shared<HttpBackend>(config);
}

std::vector<ChatMessage> build_messages(std::string_view system_prompt, const Transcript& history,
                                        std::string_view next_prompt, Perspective perspective) {
  std::vector<ChatMessage> out;
  out.reserve(history.turns.size() + 2);
  if (!system_prompt.empty()) out.push_back({MessageRole::kSystem, std::string(system_prompt)});
  const Role own = perspective == Perspective::kClient ? Role::kClient : Role::kTherapist;
  for (const Turn& turn : history.turns) {
    if (turn.role == Role::kSystem) continue;
    out.push_back({turn.role == own ? MessageRole::kAssistant : MessageRole::kUser, turn.text});
  }
  out.push_back({MessageRole::kUser, std::string(next_prompt)});
  return out;
}

}  // namespace reframe

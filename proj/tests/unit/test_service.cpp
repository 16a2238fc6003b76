#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <httplib.h>

#include "fixtures.hpp"
#include "reframe/error.hpp"
#include "reframe/io.hpp"
#include "reframe/service.hpp"

using namespace reframe;
using nlohmann::json;

namespace {

constexpr const char* kHiddenTag = "zebra-model-77";

struct ManualClock {
  std::shared_ptr<Timestamp> now = std::make_shared<Timestamp>(parse_utc("2024-03-01T09:00:00.000Z"));
  Clock clock() const {
    return [now = now] {
      *now += std::chrono::milliseconds(10);
      return *now;
    };
  }
  void advance(std::chrono::seconds s) const { *now += s; }
};

ServiceConfig make_config(const std::filesystem::path& dir) {
  ServiceConfig c;
  c.data_dir = dir;
  BackendConfig therapist;
  therapist.script = {"unused"};
  c.backends["default"] = BackendRef{therapist, kHiddenTag};
  c.backends["client"] = BackendRef{BackendConfig{}, "client-model"};
  c.client_backend = "client";
  return c;
}

StoreOptions make_options(const ManualClock& clock) {
  StoreOptions o;
  o.clock = clock.clock();
  o.resolver = [](const std::string& ref, const BackendRef&) -> std::shared_ptr<ChatBackend> {
    std::vector<std::string> replies;
    for (int i = 0; i < 20; ++i) {
      const auto batch = ref == "client" ? fixtures::passing_client_replies(fixtures::seed(1)) : fixtures::therapist_replies();
      replies.insert(replies.end(), batch.begin(), batch.end());
    }
    return std::make_shared<ScriptedBackend>(std::move(replies));
  };
  return o;
}

std::map<int, int> answers(int value) {
  std::map<int, int> a;
  for (int i = 1; i <= kPanasItems; ++i) a[i] = value;
  return a;
}

std::string status_code(const std::function<void()>& fn, int* status = nullptr) {
  try {
    fn();
  } catch (const ServiceError& e) {
    if (status) *status = e.status();
    return e.code();
  }
  FAIL("expected a ServiceError");
  return {};
}

void append_raw(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  out << text;
}

std::string live_session_through_chat(SessionStore& store) {
  const auto r = store.create_session({SessionMode::kLive, std::nullopt, ""});
  store.submit_panas(r.session_id, PanasPhase::kPre, answers(3));
  store.post_message(r.session_id, "I feel nervous about my exam tomorrow.", std::nullopt);
  store.post_message(r.session_id, "The exam is a fact, failing is my thought.", std::nullopt);
  return r.session_id;
}

}  // namespace

TEST_CASE("event log appends and reads back") {
  fixtures::TempDir dir;
  const auto path = dir.path() / "events.jsonl";
  {
    EventLog log(path, logical_clock(parse_utc("2024-01-01T00:00:00.000Z")));
    CHECK(log.recovered().entries.empty());
    CHECK(log.append(EventKind::kBatchCompleted, json{{"n", 1}}).seq == 1);
    CHECK(log.append(EventKind::kBatchCompleted, json{{"n", 2}}).seq == 2);
  }
  const auto read = read_event_log(path);
  REQUIRE(read.entries.size() == 2);
  CHECK(read.entries[1].payload.at("n") == 2);
  CHECK_FALSE(read.torn_tail);
  CHECK(read.entries[0].at == parse_utc("2024-01-01T00:00:00.000Z"));
  CHECK(read_event_log(dir.path() / "missing.jsonl").entries.empty());
}

TEST_CASE("torn tail is dropped and truncated") {
  fixtures::TempDir dir;
  const auto path = dir.path() / "events.jsonl";
  {
    EventLog log(path, system_clock());
    log.append(EventKind::kBatchCompleted, json::object());
    log.append(EventKind::kBatchCompleted, json::object());
  }
  const auto intact = std::filesystem::file_size(path);

  SUBCASE("partial line without newline") { append_raw(path, "{\"seq\":3,\"kind\":\"batch_comp"); }
  SUBCASE("unparseable final line") { append_raw(path, "{garbage}\n"); }
  SUBCASE("complete json but no newline") {
    append_raw(path, "{\"seq\":3,\"kind\":\"batch_completed\",\"at\":\"2024-01-01T00:00:00.000Z\",\"payload\":{}}");
  }

  const auto read = read_event_log(path);
  CHECK(read.torn_tail);
  CHECK(read.entries.size() == 2);
  CHECK(read.intact_bytes == intact);
  CHECK_FALSE(read.warning.empty());

  EventLog reopened(path, system_clock());
  CHECK(std::filesystem::file_size(path) == intact);
  CHECK(reopened.append(EventKind::kBatchCompleted, json::object()).seq == 3);
  CHECK(read_event_log(path).entries.size() == 3);
  CHECK_FALSE(read_event_log(path).torn_tail);
}

TEST_CASE("corruption before the tail is fatal") {
  fixtures::TempDir dir;
  const auto path = dir.path() / "events.jsonl";
  {
    EventLog log(path, system_clock());
    log.append(EventKind::kBatchCompleted, json::object());
  }
  SUBCASE("bad middle line") {
    append_raw(path, "not json\n");
    {
      EventLog log(path, system_clock());  // the bad line is the tail here, so it is dropped
    }
    append_raw(path, "not json\n");
    std::string text = read_text_file(path);
    write_text_file(path, text + text);  // now the bad line is followed by more entries
    CHECK_THROWS_AS(read_event_log(path), Error);
  }
  SUBCASE("sequence goes backwards") {
    append_raw(path, "{\"seq\":1,\"kind\":\"batch_completed\",\"at\":\"2024-01-01T00:00:00.000Z\",\"payload\":{}}\n");
    try {
      read_event_log(path);
      FAIL("expected CorruptEntry");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kCorruptEntry);
    }
  }
}

TEST_CASE("service config") {
  const auto c = load_service_config(json::parse(R"({
    "port": 9000, "data_dir": "/tmp/x", "bearer_token": "tok", "control_wait_seconds": 60,
    "backends": {"m1": {"kind": "scripted", "script": ["a"], "model_tag": "Tag1"}},
    "default_backend": "m1", "model_tag_hidden": false})"));
  CHECK(c.port == 9000);
  CHECK(c.bearer_token == "tok");
  CHECK(c.control_wait == std::chrono::seconds(60));
  CHECK(c.backends.at("m1").model_tag == "Tag1");
  CHECK_FALSE(c.model_tag_hidden);
  CHECK_THROWS_AS(load_service_config(json::parse(R"({"backends": {"x": {"kind": "http"}}})")), Error);

  ServiceConfig env = c;
  ::setenv("PORT", "7777", 1);
  ::setenv("DATA_DIR", "/tmp/other", 1);
  apply_env_overrides(env);
  ::unsetenv("PORT");
  ::unsetenv("DATA_DIR");
  CHECK(env.port == 7777);
  CHECK(env.data_dir == "/tmp/other");
}

TEST_CASE("data dir layout") {
  fixtures::TempDir dir;
  prepare_data_dir(dir.path() / "svc");
  for (const char* sub : {"sessions", "corpora", "scores", "reports"}) {
    CHECK(std::filesystem::is_directory(dir.path() / "svc" / sub));
  }
}

TEST_CASE("live session lifecycle") {
  fixtures::TempDir dir;
  ManualClock clock;
  SessionStore store(make_config(dir.path()), make_options(clock));

  const auto created = store.create_session({SessionMode::kLive, std::nullopt, ""});
  const std::string id = created.session_id;
  CHECK(session_phase(created) == SessionPhase::kIntro);
  CHECK(created.model_tag == kHiddenTag);

  int status = 0;
  CHECK(status_code([&] { store.post_message(id, "hello", std::nullopt); }, &status) == "PanasPreRequired");
  CHECK(status == 409);
  CHECK(status_code([&] { store.submit_panas(id, PanasPhase::kPost, answers(2)); }) == "PanasPreRequired");
  auto partial = answers(3);
  partial.erase(7);
  CHECK(status_code([&] { store.submit_panas(id, PanasPhase::kPre, partial); }, &status) == "IncompleteResponse");
  CHECK(status == 400);

  store.submit_panas(id, PanasPhase::kPre, answers(4));
  CHECK(session_phase(store.get(id)) == SessionPhase::kChat);
  CHECK(status_code([&] { store.post_message(id, "   ", std::nullopt); }, &status) == "InvalidRequest");
  CHECK(status == 400);

  const auto first = store.post_message(id, "I feel nervous about my exam tomorrow.", std::nullopt);
  CHECK(first.therapist_reply == fixtures::therapist_replies()[0]);
  CHECK(first.stage == Stage::kSeparateFactsFeelings);
  CHECK(status_code([&] { store.submit_panas(id, PanasPhase::kPre, answers(1)); }) == "PhaseMismatch");
  CHECK(status_code([&] { store.submit_panas(id, PanasPhase::kPost, answers(2)); }) == "ChatIncomplete");
  CHECK(status_code([&] { store.report(id); }) == "ReportNotReady");

  store.post_message(id, "The exam is a fact, failing is my thought.", std::nullopt);
  const auto last = store.post_message(id, "A friend would say one exam is not everything.", std::nullopt);
  CHECK(last.stage == Stage::kEmpatheticResponse);
  CHECK(last.phase == SessionPhase::kPanasPost);
  CHECK(status_code([&] { store.post_message(id, "more", std::nullopt); }) == "SessionComplete");

  const auto done = store.submit_panas(id, PanasPhase::kPost, answers(2));
  CHECK(session_phase(done) == SessionPhase::kReport);
  const json report = store.report(id);
  CHECK(report.at("pre").at("negative_total") == 40);
  CHECK(report.at("post").at("negative_total") == 20);
  CHECK(report.at("delta").at("items").at("Distressed") == -2);
  CHECK(report.at("negative_fluctuation") == doctest::Approx(0.5));
  CHECK(report.at("radar").at("negative").at("axes").size() == 10);

  CHECK(status_code([&] { store.get("nope"); }, &status) == "NotFound");
  CHECK(status == 404);
  CHECK(status_code([&] { store.create_session({SessionMode::kLive, std::nullopt, "ghost"}); }) == "UnknownBackend");
}

TEST_CASE("idempotent messages") {
  fixtures::TempDir dir;
  ManualClock clock;
  SessionStore store(make_config(dir.path()), make_options(clock));
  const auto id = store.create_session({SessionMode::kLive, std::nullopt, ""}).session_id;
  store.submit_panas(id, PanasPhase::kPre, answers(3));
  const auto a = store.post_message(id, "I feel nervous about my exam.", std::string("k1"));
  const auto b = store.post_message(id, "I feel nervous about my exam.", std::string("k1"));
  CHECK_FALSE(a.replayed);
  CHECK(b.replayed);
  CHECK(a.therapist_reply == b.therapist_reply);
  CHECK(store.get(id).state.transcript.turns.size() == 2);
}

TEST_CASE("control sessions wait before the post questionnaire") {
  fixtures::TempDir dir;
  ManualClock clock;
  ServiceConfig config = make_config(dir.path());
  config.control_wait = std::chrono::seconds(600);
  SessionStore store(config, make_options(clock));
  const auto id = store.create_session({SessionMode::kControl, std::nullopt, ""}).session_id;
  CHECK(store.get(id).model_tag.empty());
  store.submit_panas(id, PanasPhase::kPre, answers(3));
  CHECK(status_code([&] { store.post_message(id, "hello", std::nullopt); }) == "WrongMode");
  CHECK(status_code([&] { store.submit_panas(id, PanasPhase::kPost, answers(2)); }) == "WaitGateClosed");
  clock.advance(std::chrono::seconds(601));
  store.submit_panas(id, PanasPhase::kPost, answers(2));
  CHECK(session_phase(store.get(id)) == SessionPhase::kReport);
}

TEST_CASE("simulated sessions run at creation") {
  fixtures::TempDir dir;
  ManualClock clock;
  SessionStore store(make_config(dir.path()), make_options(clock));
  const auto r = store.create_session({SessionMode::kSimulated, fixtures::seed(1), ""});
  CHECK(r.state.status == SessionStatus::kComplete);
  CHECK(r.state.transcript.turns.size() == 6);
  CHECK(status_code([&] { store.submit_panas(r.session_id, PanasPhase::kPre, answers(3)); }) == "WrongMode");
  CHECK(status_code([&] { store.create_session({SessionMode::kSimulated, std::nullopt, ""}); }) == "InvalidRequest");
}

TEST_CASE("restart replays to the same state") {
  fixtures::TempDir dir;
  ManualClock clock;
  json before;
  std::string live;
  {
    SessionStore store(make_config(dir.path()), make_options(clock));
    live = live_session_through_chat(store);
    const auto control = store.create_session({SessionMode::kControl, std::nullopt, ""}).session_id;
    store.submit_panas(control, PanasPhase::kPre, answers(2));
    store.create_session({SessionMode::kSimulated, fixtures::seed(1), ""});
    store.record_score(EvaluatorRecord{"r1", "dlg-1", "M", make_scores(3, 3, 2)});
    store.record_batch(json{{"runs", 4}});
    before = store.snapshot();
  }
  SessionStore reopened(make_config(dir.path()), make_options(clock));
  CHECK(reopened.snapshot() == before);
  CHECK(reopened.get(live).state.transcript.turns.size() == 4);
  CHECK(reopened.scores().size() == 1);

  // A torn write after the restart point is ignored.
  append_raw(dir.path() / "events.jsonl", "{\"seq\":999,\"kind\":\"turn_");
  SessionStore torn(make_config(dir.path()), make_options(clock));
  CHECK(torn.recovery().torn_tail);
  CHECK(torn.snapshot() == before);
  // And the log keeps working.
  torn.post_message(live, "Maybe one exam is not everything.", std::nullopt);
  SessionStore again(make_config(dir.path()), make_options(clock));
  CHECK(again.get(live).state.status == SessionStatus::kComplete);
}

TEST_CASE("entries that cannot be applied name their seq") {
  fixtures::TempDir dir;
  append_raw(dir.path() / "events.jsonl",
             "{\"seq\":1,\"kind\":\"turn_added\",\"at\":\"2024-01-01T00:00:00.000Z\",\"payload\":{\"session_id\":\"x\","
             "\"turns\":[]}}\n");
  ManualClock clock;
  try {
    SessionStore store(make_config(dir.path()), make_options(clock));
    FAIL("expected CorruptEntry");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorruptEntry);
    CHECK(std::string(e.what()).find("seq 1") != std::string::npos);
  }
}

TEST_CASE("http api") {
  fixtures::TempDir dir;
  ManualClock clock;
  SessionStore store(make_config(dir.path()), make_options(clock));
  HttpService service(store);
  const int port = service.start("127.0.0.1", 0);
  httplib::Client cli("127.0.0.1", port);
  std::vector<std::string> bodies;
  auto post = [&](const std::string& path, const json& body, httplib::Headers headers = {}) {
    auto res = cli.Post(path, headers, body.dump(), "application/json");
    REQUIRE(res);
    bodies.push_back(res->body);
    return std::make_pair(res->status, json::parse(res->body));
  };
  auto get = [&](const std::string& path) {
    auto res = cli.Get(path);
    REQUIRE(res);
    bodies.push_back(res->body);
    return std::make_pair(res->status, res->body.empty() ? json() : json::parse(res->body));
  };

  CHECK(get("/healthz").first == 200);
  const auto guidance = get("/guidance");
  CHECK(guidance.second.at("guidance").get<std::string>().find("over the past week") != std::string::npos);

  const auto [created_status, created] = post("/sessions", json{{"mode", "live"}});
  CHECK(created_status == 201);
  const std::string id = created.at("session_id");
  CHECK(created.at("phase") == "intro");
  CHECK(created.contains("guidance"));
  CHECK_FALSE(created.contains("model_tag"));

  const auto early = post("/sessions/" + id + "/messages", json{{"text", "hi"}});
  CHECK(early.first == 409);
  CHECK(early.second.at("code") == "PanasPreRequired");
  CHECK(early.second.contains("message"));

  json letters = json::object();
  for (int i = 1; i <= kPanasItems; ++i) letters[std::to_string(i)] = "D";
  const auto pre = post("/sessions/" + id + "/panas", json{{"phase", "pre"}, {"answers", letters}});
  CHECK(pre.first == 200);
  CHECK(pre.second.at("phase") == "chat");

  const auto m1 = post("/sessions/" + id + "/messages", json{{"text", "I feel nervous about my exam."}},
                       {{"Idempotency-Key", "abc"}});
  CHECK(m1.first == 200);
  CHECK(m1.second.at("stage") == 1);
  const auto m1again = post("/sessions/" + id + "/messages", json{{"text", "I feel nervous about my exam."}},
                            {{"Idempotency-Key", "abc"}});
  CHECK(m1again.second.at("replayed") == true);
  CHECK(m1again.second.at("therapist_reply") == m1.second.at("therapist_reply"));
  post("/sessions/" + id + "/messages", json{{"text", "The exam is a fact."}, {"idempotency_key", "k2"}});
  const auto m3 = post("/sessions/" + id + "/messages", json{{"text", "A friend would be kinder."}});
  CHECK(m3.second.at("phase") == "panas_post");

  CHECK(get("/sessions/" + id + "/report").first == 409);
  json post_answers = json::object();
  for (int i = 1; i <= kPanasItems; ++i) post_answers[std::to_string(i)] = 2;
  CHECK(post("/sessions/" + id + "/panas", json{{"phase", "post"}, {"answers", post_answers}}).first == 200);
  const auto report = get("/sessions/" + id + "/report");
  CHECK(report.first == 200);
  CHECK(report.second.at("pre").at("negative_total") == 40);

  const auto session = get("/sessions/" + id);
  CHECK(session.second.at("turns").size() == 6);
  CHECK(session.second.at("phase") == "report");

  CHECK(post("/sessions", json{{"mode", "carrier"}}).first == 400);
  CHECK(post("/sessions/" + id + "/panas", json{{"phase", "pre"}}).first == 400);
  {
    auto res = cli.Post("/sessions", "{not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(json::parse(res->body).at("code") == "InvalidRequest");
  }
  CHECK(get("/sessions/unknown").first == 404);
  CHECK(get("/no/such/route").first == 404);
  CHECK(post("/scores", json{{"evaluator_id", "r"}, {"dialogue_id", "d"}, {"empathy", 3}, {"logic", 3},
                             {"guidance", 3}})
            .first == 201);
  CHECK(store.scores().size() == 1);

  // Clients never see the therapist model while it is hidden.
  for (const auto& body : bodies) CHECK(body.find(kHiddenTag) == std::string::npos);
  service.stop();
}

TEST_CASE("model tag shown when not hidden") {
  fixtures::TempDir dir;
  ManualClock clock;
  ServiceConfig config = make_config(dir.path());
  config.model_tag_hidden = false;
  SessionStore store(config, make_options(clock));
  const auto r = store.create_session({SessionMode::kLive, std::nullopt, ""});
  CHECK(session_public_json(r, "").at("model_tag") == kHiddenTag);
}

TEST_CASE("bearer token") {
  fixtures::TempDir dir;
  ManualClock clock;
  ServiceConfig config = make_config(dir.path());
  config.bearer_token = "s3cret";
  SessionStore store(config, make_options(clock));
  HttpService service(store);
  const int port = service.start("127.0.0.1", 0);
  httplib::Client cli("127.0.0.1", port);

  auto res = cli.Post("/sessions", "{}", "application/json");
  REQUIRE(res);
  CHECK(res->status == 401);
  CHECK(json::parse(res->body).at("code") == "Unauthorized");
  CHECK(cli.Get("/healthz")->status == 200);

  cli.set_bearer_token_auth("s3cret");
  res = cli.Post("/sessions", "{}", "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  service.stop();
}

#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "reframe/cli.hpp"
#include "reframe/error.hpp"
#include "reframe/io.hpp"
#include "reframe/simulation.hpp"

using namespace reframe;
using nlohmann::json;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string sample(const std::string& name) { return fixtures::source_path("data/samples/" + name).string(); }
std::string fixture(const std::string& name) { return fixtures::source_path("data/fixtures/" + name).string(); }

std::vector<std::string> simulate_args() {
  return {"simulate", "--seeds", sample("seeds.csv"), "--client", "scripted:" + sample("client_script.txt"),
          "--therapist", "scripted:" + sample("therapist_script.txt")};
}

}  // namespace

TEST_CASE("panas-report prints the group table") {
  const auto r = run({"panas-report", "--in", fixture("client_change.json"), "--groups", fixture("groups.json")});
  CHECK(r.code == 0);
  CHECK(r.out.find("0.440") != std::string::npos);
  CHECK(r.out.find("0.411") != std::string::npos);
  CHECK(r.out.find("1.233") != std::string::npos);
  CHECK(r.out.find("0.100") != std::string::npos);

  fixtures::TempDir dir;
  const auto j = run({"panas-report", "--in", fixture("client_change.json"), "--groups", fixture("groups.json"),
                      "--json", "--svg-dir", dir.path().string()});
  CHECK(j.code == 0);
  CHECK(json::parse(j.out).size() == 4);
  CHECK(std::filesystem::exists(dir.path() / "client-6-negative.svg"));
}

TEST_CASE("anova subcommand") {
  const auto r = run({"anova", "--values", "6,8,4,5,3,4", "--values", "8,12,9,11,6,8", "--values", "13,9,11,8,7,12"});
  CHECK(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j.at("F").get<double>() == doctest::Approx(9.264705882352942));
  CHECK(j.at("df_within") == 15);

  const auto pre = run({"anova", "--in", fixture("client_change.json"), "--groups", fixture("pretest_groups.json")});
  CHECK(pre.code == 0);
  CHECK(json::parse(pre.out).at("p").get<double>() > 0.05);

  const auto bad = run({"anova", "--values", "1,x"});
  CHECK(bad.code == 1);
  CHECK(json::parse(bad.err).at("error") == "InvalidRequest");
}

TEST_CASE("simulate is deterministic with scripted backends") {
  const auto a = run(simulate_args());
  const auto b = run(simulate_args());
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
  std::istringstream lines(a.out);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto runj = json::parse(line).get<DialogueRun>();
    CHECK(runj.outcome == RunOutcome::kCompleted);
    CHECK(runj.transcript.turns.size() == 6);
    ++n;
  }
  CHECK(n == 4);

  auto parallel = simulate_args();
  parallel.insert(parallel.end(), {"--parallelism", "4"});
  CHECK(run(parallel).out == a.out);
}

TEST_CASE("config file expands to flags and explicit flags win") {
  fixtures::TempDir dir;
  const auto cfg = dir.path() / "sim.json";
  write_text_file(cfg, json{{"rounds", 1}, {"therapist-tag", "from-config"}}.dump());
  auto args = simulate_args();
  args.insert(args.end(), {"--config", cfg.string()});
  const auto r = run(args);
  REQUIRE(r.code == 0);
  const auto first = json::parse(r.out.substr(0, r.out.find('\n'))).get<DialogueRun>();
  CHECK(first.transcript.turns.size() == 2);
  CHECK(first.model_tag == "from-config");

  args.insert(args.end(), {"--rounds", "2"});
  const auto overridden = run(args);
  REQUIRE(overridden.code == 0);
  CHECK(json::parse(overridden.out.substr(0, overridden.out.find('\n'))).get<DialogueRun>().transcript.turns.size() ==
        4);

  const auto expanded = expand_config_args({"simulate", "--config", cfg.string(), "--seeds", "x"});
  CHECK(std::find(expanded.begin(), expanded.end(), "--rounds") != expanded.end());
  CHECK(expanded.back() == "x");
}

TEST_CASE("usage and runtime errors") {
  const auto unknown = run({"simulate", "--bogus"});
  CHECK(unknown.code == 2);
  CHECK_FALSE(unknown.err.empty());
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);

  const auto missing = run({"panas-report", "--in", "/nonexistent/file.json", "--groups", fixture("groups.json")});
  CHECK(missing.code == 1);
  CHECK(missing.err.find('\n') == missing.err.size() - 1);
  const json e = json::parse(missing.err);
  CHECK(e.at("error") == "IoError");
  CHECK(e.contains("message"));
}

TEST_CASE("blind and human scoring") {
  fixtures::TempDir dir;
  const auto runs_path = dir.path() / "runs.jsonl";
  auto args = simulate_args();
  args.insert(args.end(), {"--out", runs_path.string(), "--therapist-tag", "ModelQ"});
  REQUIRE(run(args).code == 0);

  const auto mapping_path = dir.path() / "map.json";
  const auto blind = run({"blind", "--in", runs_path.string(), "--seed", "5", "--mapping", mapping_path.string()});
  REQUIRE(blind.code == 0);
  CHECK(blind.out.find("ModelQ") == std::string::npos);
  const json mapping = json::parse(read_text_file(mapping_path));
  CHECK(mapping.size() == 4);

  std::string scores;
  for (const auto& [blind_id, dialogue] : mapping.items()) {
    (void)dialogue;
    scores += json{{"evaluator_id", "r1"}, {"dialogue_id", blind_id}, {"empathy", 3}, {"logic", 3}, {"guidance", 2}}
                  .dump() +
              "\n";
  }
  const auto scores_path = dir.path() / "scores.jsonl";
  write_text_file(scores_path, scores);
  const auto scored = run({"score", "--in", runs_path.string(), "--mode", "human", "--scores", scores_path.string(),
                           "--mapping", mapping_path.string()});
  CHECK(scored.code == 0);
  CHECK(scored.out.find("ModelQ") != std::string::npos);
  CHECK(scored.out.find("2.000") != std::string::npos);
}

TEST_CASE("backend specs") {
  fixtures::TempDir dir;
  write_text_file(dir.path() / "s.txt", "Hello {case_id}\\nline two\nsecond\n");
  const auto spec = parse_backend_spec("scripted:" + (dir.path() / "s.txt").string());
  CHECK(spec.scripted);
  REQUIRE(spec.config.script.size() == 2);
  CHECK(spec.config.script[0] == "Hello {case_id}\nline two");
  const auto backend = backend_for_seed(spec, fixtures::seed(3));
  CompletionRequest req;
  req.messages = {{MessageRole::kUser, "x"}};
  CHECK(backend->complete(req).content == "Hello case-3\nline two");

  const auto http = parse_backend_spec("http:http://127.0.0.1:1/v1/chat/completions");
  CHECK_FALSE(http.scripted);
  CHECK(http.config.kind == BackendKind::kHttp);
  CHECK_THROWS_AS(parse_backend_spec("ftp:x"), Error);
}

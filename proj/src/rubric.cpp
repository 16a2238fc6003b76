#include "reframe/rubric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "reframe/assets.hpp"
#include "reframe/error.hpp"
#include "reframe/shuffle.hpp"

namespace reframe {

namespace {

using nlohmann::json;

void check_range(int value, std::string_view name) {
  if (value < 0 || value > 3) {
    throw Error(ErrorCode::kOutOfRange, std::string(name) + " must be in 0..3, got " + std::to_string(value));
  }
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string pad_right(std::string s, size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string pad_left(std::string s, size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

DiffStats diff_stats(const std::vector<double>& diffs) {
  DiffStats s;
  if (diffs.empty()) return s;
  double sum = 0;
  for (double d : diffs) sum += d;
  s.avg_abs_diff = sum / static_cast<double>(diffs.size());
  if (diffs.size() < 2) return s;
  double ss = 0;
  for (double d : diffs) ss += (d - s.avg_abs_diff) * (d - s.avg_abs_diff);
  s.std_dev = std::sqrt(ss / static_cast<double>(diffs.size() - 1));
  return s;
}

std::map<std::string, const EvaluatorRecord*> index_by_dialogue(const std::vector<EvaluatorRecord>& records) {
  std::map<std::string, const EvaluatorRecord*> out;
  for (const auto& r : records) {
    if (!out.emplace(r.dialogue_id, &r).second) {
      throw Error(ErrorCode::kDuplicateId, "dialogue '" + r.dialogue_id + "' scored twice by one rater");
    }
  }
  return out;
}

}  // namespace

std::optional<int> tier_table_overall(int e, int l, int g) {
  check_range(e, "empathy");
  check_range(l, "logic");
  check_range(g, "guidance");
  if (e == 3 && l == 3 && g == 3) return 3;
  if (e == 3 && l == 3 && g == 2) return 2;
  if (e >= 2 && l >= 2 && g <= 1) return 1;
  if (e <= 1 && l <= 1) return 0;
  return std::nullopt;
}

int derive_overall(int e, int l, int g, OverallMode mode) {
  if (mode == OverallMode::kStrict) {
    if (auto tier = tier_table_overall(e, l, g)) return *tier;
    throw Error(ErrorCode::kGapCell, "(" + std::to_string(e) + "," + std::to_string(l) + "," + std::to_string(g) +
                                         ") is not covered by the tier table");
  }
  check_range(e, "empathy");
  check_range(l, "logic");
  check_range(g, "guidance");
  if (e == 3 && l == 3 && g == 3) return 3;
  if (e == 3 && l == 3 && g >= 2) return 2;
  if (e >= 2 && l >= 2) return 1;
  return 0;
}

DialogueScores make_scores(int empathy, int logic, int guidance, OverallMode mode) {
  return {empathy, logic, guidance, derive_overall(empathy, logic, guidance, mode)};
}

bool overall_consistent(const DialogueScores& s) {
  return s.overall == derive_overall(s.empathy, s.logic, s.guidance);
}

void to_json(json& j, const EvaluatorRecord& r) {
  j = json{{"evaluator_id", r.evaluator_id},
           {"dialogue_id", r.dialogue_id},
           {"empathy", r.scores.empathy},
           {"logic", r.scores.logic},
           {"guidance", r.scores.guidance},
           {"overall", r.scores.overall}};
  if (!r.model_tag.empty()) j["model_tag"] = r.model_tag;
}

void from_json(const json& j, EvaluatorRecord& r) {
  r.evaluator_id = j.at("evaluator_id").get<std::string>();
  r.dialogue_id = j.at("dialogue_id").get<std::string>();
  r.model_tag = j.value("model_tag", std::string());
  r.scores.empathy = j.at("empathy").get<int>();
  r.scores.logic = j.at("logic").get<int>();
  r.scores.guidance = j.at("guidance").get<int>();
  check_range(r.scores.empathy, "empathy");
  check_range(r.scores.logic, "logic");
  check_range(r.scores.guidance, "guidance");
  r.scores.overall = j.contains("overall") ? j.at("overall").get<int>() : derive_overall(r.scores.empathy, r.scores.logic, r.scores.guidance);
  check_range(r.scores.overall, "overall");
}

std::vector<EvaluatorRecord> parse_score_records(std::string_view jsonl) {
  std::vector<EvaluatorRecord> out;
  std::set<std::pair<std::string, std::string>> seen;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    EvaluatorRecord r;
    try {
      r = json::parse(line).get<EvaluatorRecord>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMissingField, "score line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.emplace(r.evaluator_id, r.dialogue_id).second) {
      throw Error(ErrorCode::kDuplicateId, "score line " + std::to_string(line_no) + ": " + r.evaluator_id +
                                               " already scored " + r.dialogue_id);
    }
    out.push_back(std::move(r));
  }
  return out;
}

BlindBatch make_blind_batch(const std::vector<TaggedDialogue>& dialogues, std::uint64_t rng_seed) {
  std::vector<std::string> ids;
  std::vector<std::string> tags;
  std::set<std::string> seen;
  for (const auto& d : dialogues) {
    if (!seen.insert(d.dialogue_id).second) throw Error(ErrorCode::kDuplicateId, "dialogue '" + d.dialogue_id + "'");
    ids.push_back(d.dialogue_id);
    if (!d.model_tag.empty()) tags.push_back(lower(d.model_tag));
  }
  std::sort(ids.begin(), ids.end());
  seeded_shuffle(ids, rng_seed);

  // Blind ids come from a second stream so they do not echo the permutation.
  std::mt19937_64 rng(rng_seed ^ 0x9e3779b97f4a7c15ULL);
  std::set<std::string> used;
  auto fresh_id = [&] {
    for (;;) {
      char buf[24];
      std::snprintf(buf, sizeof buf, "b-%012llx", static_cast<unsigned long long>(rng() & 0xffffffffffffULL));
      std::string id = buf;
      const bool leaks = std::any_of(tags.begin(), tags.end(),
                                     [&](const std::string& t) { return id.find(t) != std::string::npos; });
      if (!leaks && used.insert(id).second) return id;
    }
  };

  BlindBatch batch;
  batch.rng_seed = rng_seed;
  for (auto& id : ids) batch.items.push_back({fresh_id(), std::move(id)});
  return batch;
}

AggregateReport aggregate(const std::vector<EvaluatorRecord>& records) {
  if (records.empty()) throw Error(ErrorCode::kEmptyGroup, "no score records");
  struct Sums {
    double e = 0, l = 0, g = 0, o = 0;
    int n = 0;
  };
  std::map<std::string, std::map<std::string, Sums>> by_model;
  AggregateReport report;
  for (const auto& r : records) {
    if (r.model_tag.empty()) {
      throw Error(ErrorCode::kEmptyGroup, "record for " + r.dialogue_id + " has no model tag");
    }
    auto& s = by_model[r.model_tag][r.dialogue_id];
    s.e += r.scores.empathy;
    s.l += r.scores.logic;
    s.g += r.scores.guidance;
    s.o += r.scores.overall;
    ++s.n;
    if (!overall_consistent(r.scores)) report.inconsistent.push_back(r);
  }
  for (const auto& [tag, dialogues] : by_model) {
    ModelMeans m;
    m.model_tag = tag;
    m.dialogues = dialogues.size();
    for (const auto& [id, s] : dialogues) {
      m.empathy += s.e / s.n;
      m.logic += s.l / s.n;
      m.guidance += s.g / s.n;
      m.overall += s.o / s.n;
    }
    const auto n = static_cast<double>(m.dialogues);
    m.empathy /= n;
    m.logic /= n;
    m.guidance /= n;
    m.overall /= n;
    report.models.push_back(std::move(m));
  }
  return report;
}

std::string format_means_row(const ModelMeans& m) {
  return m.model_tag + " " + fixed3(m.empathy) + " " + fixed3(m.logic) + " " + fixed3(m.guidance) + " " +
         fixed3(m.overall);
}

std::string format_means_table(const std::vector<ModelMeans>& models) {
  size_t width = 5;
  for (const auto& m : models) width = std::max(width, m.model_tag.size());
  std::string out = pad_right("Model", width) + "  Empathy    Logic  Guidance  Overall\n";
  for (const auto& m : models) {
    out += pad_right(m.model_tag, width) + "  " + pad_left(fixed3(m.empathy), 7) + "  " + pad_left(fixed3(m.logic), 7) +
           "  " + pad_left(fixed3(m.guidance), 8) + "  " + pad_left(fixed3(m.overall), 7) + "\n";
  }
  return out;
}

IaaReport iaa(const std::vector<EvaluatorRecord>& rater_a, const std::vector<EvaluatorRecord>& rater_b) {
  const auto a = index_by_dialogue(rater_a);
  const auto b = index_by_dialogue(rater_b);
  if (a.size() != b.size() ||
      !std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw Error(ErrorCode::kMismatchedDialogueSets, "raters scored different dialogue sets (" +
                                                        std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                                        " dialogues)");
  }
  IaaReport report;
  if (!rater_a.empty()) report.rater_a = rater_a.front().evaluator_id;
  if (!rater_b.empty()) report.rater_b = rater_b.front().evaluator_id;
  report.dialogues = a.size();
  std::vector<double> de, dl, dg, dov;
  for (const auto& [id, ra] : a) {
    const auto* rb = b.at(id);
    de.push_back(std::abs(ra->scores.empathy - rb->scores.empathy));
    dl.push_back(std::abs(ra->scores.logic - rb->scores.logic));
    dg.push_back(std::abs(ra->scores.guidance - rb->scores.guidance));
    dov.push_back(std::abs(ra->scores.overall - rb->scores.overall));
  }
  report.empathy = diff_stats(de);
  report.logic = diff_stats(dl);
  report.guidance = diff_stats(dg);
  report.overall = diff_stats(dov);
  return report;
}

json iaa_to_json(const IaaReport& r) {
  auto stats = [](const DiffStats& s) { return json{{"avg_abs_diff", s.avg_abs_diff}, {"std_dev", s.std_dev}}; };
  return json{{"formula", kIaaFormula},     {"pair", {r.rater_a, r.rater_b}}, {"dialogues", r.dialogues},
              {"empathy", stats(r.empathy)}, {"logic", stats(r.logic)},       {"guidance", stats(r.guidance)},
              {"overall", stats(r.overall)}};
}

std::string format_iaa_table(const IaaReport& r) {
  std::string out = "# " + r.rater_a + " vs " + r.rater_b + ", n=" + std::to_string(r.dialogues) + "\n# " +
                    std::string(kIaaFormula) + "\n";
  out += "Criterion  Avg.Diff  Std.Dev\n";
  auto row = [&](const char* name, const DiffStats& s) {
    out += pad_right(name, 9) + "  " + pad_left(fixed3(s.avg_abs_diff), 8) + "  " + pad_left(fixed3(s.std_dev), 7) +
           "\n";
  };
  row("Empathy", r.empathy);
  row("Logic", r.logic);
  row("Guidance", r.guidance);
  row("Overall", r.overall);
  return out;
}

DialogueScores parse_score_reply(std::string_view reply) {
  static const std::regex empathy_re(R"(empathy\s*[=:]\s*(-?\d+))", std::regex::icase);
  static const std::regex logic_re(R"(logic(?:al[ _]coherence)?\s*[=:]\s*(-?\d+))", std::regex::icase);
  static const std::regex guidance_re(R"(guidance\s*[=:]\s*(-?\d+))", std::regex::icase);
  const std::string text(reply);
  auto grab = [&](const std::regex& re, const char* name) {
    std::smatch m;
    if (!std::regex_search(text, m, re)) {
      throw Error(ErrorCode::kUnparseableScores, std::string("no ") + name + " score in '" + text + "'");
    }
    const int value = std::stoi(m[1].str());
    if (value < 0 || value > 3) {
      throw Error(ErrorCode::kUnparseableScores,
                  std::string("OutOfRange: ") + name + "=" + std::to_string(value) + " outside 0..3");
    }
    return value;
  };
  return make_scores(grab(empathy_re, "empathy"), grab(logic_re, "logic"), grab(guidance_re, "guidance"));
}

std::string_view rubric_text() {
  static const std::string_view text = embedded_asset("rubric.txt").value_or("");
  return text;
}

std::string build_scoring_prompt(const Transcript& dialogue, const std::vector<ScoredExemplar>& exemplars) {
  std::string prompt = "You evaluate a psychotherapist's replies in a counseling dialogue.\n\n";
  prompt += rubric_text();
  prompt += "\n";
  for (size_t i = 0; i < exemplars.size(); ++i) {
    const auto& ex = exemplars[i];
    prompt += "\nExample " + std::to_string(i + 1) + ":\n" + serialize_history(ex.dialogue) + "\nScores: empathy=" +
              std::to_string(ex.scores.empathy) + " logic=" + std::to_string(ex.scores.logic) +
              " guidance=" + std::to_string(ex.scores.guidance) + "\n";
  }
  prompt += "\nDialogue to score:\n" + serialize_history(dialogue) +
            "\n\nReply with one line in exactly this form and nothing else:\nempathy=N logic=N guidance=N";
  return prompt;
}

DialogueScores llm_score(const Transcript& dialogue, const std::vector<ScoredExemplar>& exemplars,
                         ChatBackend& backend, const std::string& model_id) {
  CompletionRequest request;
  request.temperature = kScoringTemperature;
  request.max_tokens = 32;
  request.model_id = model_id;
  request.messages = {{MessageRole::kUser, build_scoring_prompt(dialogue, exemplars)}};
  std::string detail;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const ChatMessage reply = backend.complete(request);
    try {
      return parse_score_reply(reply.content);
    } catch (const Error& e) {
      detail = e.message();
    }
    request.messages.push_back(reply);
    request.messages.push_back(
        {MessageRole::kUser, "That reply could not be read. Answer with: empathy=N logic=N guidance=N, each N in 0..3."});
  }
  throw Error(ErrorCode::kUnparseableScores, "after re-ask: " + detail);
}

}  // namespace reframe

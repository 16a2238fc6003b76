#include "reframe/dataset.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "reframe/digest.hpp"
#include "reframe/error.hpp"
#include "reframe/io.hpp"
#include "reframe/shuffle.hpp"

namespace reframe {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string join_lines(const std::vector<size_t>& lines) {
  std::string out;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(lines[i]);
  }
  return out;
}

struct RawSeed {
  size_t line = 0;
  std::string case_id;
  std::string thinking_trap;
  std::string thought;
};

SeedCorpus finish_corpus(std::vector<RawSeed> rows, SeedSource source, std::string provenance) {
  std::vector<size_t> missing;
  for (const auto& row : rows) {
    if (row.thinking_trap.empty() || row.thought.empty()) missing.push_back(row.line);
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::kMissingField,
                provenance + ": thinking_trap or thought empty at line" + (missing.size() > 1 ? "s " : " ") +
                    join_lines(missing));
  }
  SeedCorpus corpus;
  corpus.provenance = std::move(provenance);
  std::set<std::string> seen;
  size_t index = 0;
  for (auto& row : rows) {
    ++index;
    std::string id = row.case_id.empty() ? "row-" + std::to_string(index) : row.case_id;
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::kDuplicateId,
                  corpus.provenance + ": case_id '" + id + "' repeated at line " + std::to_string(row.line));
    }
    corpus.cases.push_back(SeedCase{std::move(id), std::move(row.thinking_trap), std::move(row.thought), source});
  }
  return corpus;
}

std::vector<RawSeed> read_csv_seeds(std::string_view text, const std::string& provenance) {
  auto rows = parse_csv(text);
  if (rows.empty()) return {};
  const auto& header = rows.front().fields;
  auto column = [&](std::string_view name) -> std::optional<size_t> {
    for (size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) return i;
    }
    return std::nullopt;
  };
  const auto id_col = column("case_id");
  const auto trap_col = column("thinking_trap");
  const auto thought_col = column("thought");
  if (!trap_col || !thought_col) {
    throw Error(ErrorCode::kMissingField, provenance + ": header must name thinking_trap and thought");
  }
  auto field = [](const CsvRow& row, std::optional<size_t> col) {
    return col && *col < row.fields.size() ? trim(row.fields[*col]) : std::string();
  };
  std::vector<RawSeed> out;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.fields.size() == 1 && trim(row.fields[0]).empty()) continue;
    out.push_back({row.line, field(row, id_col), field(row, trap_col), field(row, thought_col)});
  }
  return out;
}

std::vector<RawSeed> read_jsonl_seeds(std::string_view text, const std::string& provenance) {
  std::vector<RawSeed> out;
  std::istringstream in{std::string(text)};
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorCode::kMissingField, provenance + ": line " + std::to_string(line_no) + " is not a JSON object");
    }
    auto str = [&](const char* key) {
      const auto it = j.find(key);
      if (it == j.end() || it->is_null()) return std::string();
      return it->is_string() ? trim(it->get<std::string>()) : it->dump();
    };
    out.push_back({line_no, str("case_id"), str("thinking_trap"), str("thought")});
  }
  return out;
}

TrainingRecord make_record(const DialogueRun& run, Split split) {
  TrainingRecord record;
  record.case_id = run.transcript.seed.case_id;
  record.split = split;
  record.therapist_system_prompt = run.therapist_system_prompt;
  record.adversarial = run.adversarial;
  for (const auto& turn : run.transcript.turns) record.conversation.push_back({turn.role, turn.stage, turn.text});
  return record;
}

}  // namespace

std::vector<CsvRow> parse_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  CsvRow row;
  std::string field;
  size_t line = 1;
  row.line = 1;
  bool quoted = false;
  bool row_open = false;

  auto end_field = [&] {
    row.fields.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row = CsvRow{};
    row_open = false;
  };

  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (!row_open) {
      row.line = line;
      row_open = true;
    }
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        ++line;
        end_row();
        break;
      case '\n':
        ++line;
        end_row();
        break;
      default:
        field += c;
    }
  }
  if (row_open) end_row();
  return rows;
}

SeedCorpus parse_seeds(std::string_view text, SeedFormat format, SeedSource source, std::string provenance) {
  auto rows = format == SeedFormat::kCsv ? read_csv_seeds(text, provenance) : read_jsonl_seeds(text, provenance);
  return finish_corpus(std::move(rows), source, std::move(provenance));
}

SeedCorpus ingest_seeds(const std::filesystem::path& path, SeedSource source) {
  const auto ext = path.extension().string();
  const SeedFormat format = ext == ".jsonl" || ext == ".json" ? SeedFormat::kJsonl : SeedFormat::kCsv;
  return parse_seeds(read_text_file(path), format, source, path.string());
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "valid") return Split::kValid;
  if (text == "test") return Split::kTest;
  throw Error(ErrorCode::kMissingField, "unknown split '" + std::string(text) + "'");
}

SplitMap assign_splits(const SeedCorpus& training_source, const SeedCorpus& test_source, const SplitSpec& spec) {
  if (spec.train + spec.valid > training_source.cases.size()) {
    throw Error(ErrorCode::kCountOverflow, "train+valid = " + std::to_string(spec.train + spec.valid) +
                                               " exceeds " + std::to_string(training_source.cases.size()) +
                                               " training-source cases");
  }
  if (spec.test > test_source.cases.size()) {
    throw Error(ErrorCode::kCountOverflow, "test = " + std::to_string(spec.test) + " exceeds " +
                                               std::to_string(test_source.cases.size()) + " test-source cases");
  }
  auto ids_of = [&](const SeedCorpus& corpus) {
    std::vector<std::string> ids;
    ids.reserve(corpus.cases.size());
    for (const auto& c : corpus.cases) ids.push_back(c.case_id);
    if (spec.assignment == SplitAssignment::kSeededShuffle) seeded_shuffle(ids, spec.shuffle_seed);
    return ids;
  };

  SplitMap splits;
  auto put = [&](const std::string& id, Split split) {
    if (!splits.emplace(id, split).second) {
      throw Error(ErrorCode::kDuplicateId, "case_id '" + id + "' appears in both corpora");
    }
  };
  const auto training = ids_of(training_source);
  for (size_t i = 0; i < spec.valid; ++i) put(training[i], Split::kValid);
  for (size_t i = spec.valid; i < spec.valid + spec.train; ++i) put(training[i], Split::kTrain);
  const auto test = ids_of(test_source);
  for (size_t i = 0; i < spec.test; ++i) put(test[i], Split::kTest);
  return splits;
}

void to_json(json& j, const TrainingRecord& record) {
  json messages = json::array();
  for (const auto& m : record.conversation) {
    messages.push_back({{"role", to_string(m.role)}, {"stage", static_cast<int>(m.stage)}, {"text", m.text}});
  }
  j = json{{"case_id", record.case_id},
           {"split", to_string(record.split)},
           {"system", record.therapist_system_prompt},
           {"messages", std::move(messages)},
           {"adversarial", record.adversarial}};
}

void from_json(const json& j, TrainingRecord& record) {
  record.case_id = j.at("case_id").get<std::string>();
  record.split = parse_split(j.at("split").get<std::string>());
  record.therapist_system_prompt = j.at("system").get<std::string>();
  record.adversarial = j.value("adversarial", false);
  record.conversation.clear();
  for (const auto& m : j.at("messages")) {
    const int stage = m.at("stage").get<int>();
    if (stage < 1 || stage > 3) throw Error(ErrorCode::kMalformedTranscript, "stage out of range");
    record.conversation.push_back(
        {parse_role(m.at("role").get<std::string>()), static_cast<Stage>(stage), m.at("text").get<std::string>()});
  }
}

BuildResult collect_records(const std::vector<DialogueRun>& runs, const SplitMap& splits) {
  BuildResult result;
  for (const auto& run : runs) {
    const auto& id = run.transcript.seed.case_id;
    const auto split = splits.find(id);
    if (split == splits.end()) {
      result.failures.push_back({id, run.outcome, run.failed_stage, "no split assigned"});
    } else if (run.outcome != RunOutcome::kCompleted) {
      result.failures.push_back({id, run.outcome, run.failed_stage, run.error});
    } else {
      result.records.push_back(make_record(run, split->second));
    }
  }
  return result;
}

BuildResult build_corpus(const std::vector<SeedCase>& seeds, const SplitMap& splits, const BackendFactory& factory,
                         const SimulationConfig& config, int parallelism) {
  return collect_records(run_batch(seeds, factory, config, parallelism), splits);
}

void to_json(json& j, const Manifest& manifest) {
  json counts = json::object();
  for (const auto& [split, n] : manifest.counts) counts[std::string(to_string(split))] = n;
  j = json{{"counts", std::move(counts)}, {"sha256", manifest.sha256}};
}

std::string serialize_records(const std::vector<TrainingRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<TrainingRecord> deserialize_records(std::string_view text) {
  std::vector<TrainingRecord> records;
  std::istringstream in{std::string(text)};
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      records.push_back(json::parse(line).get<TrainingRecord>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedTranscript, "record line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

Manifest export_jsonl(const std::vector<TrainingRecord>& records, const std::filesystem::path& path) {
  const std::string body = serialize_records(records);
  write_text_file(path, body);
  Manifest manifest;
  manifest.counts = {{Split::kTrain, 0}, {Split::kValid, 0}, {Split::kTest, 0}};
  for (const auto& r : records) ++manifest.counts[r.split];
  manifest.sha256 = sha256_hex(body);
  return manifest;
}

std::vector<TrainingRecord> import_jsonl(const std::filesystem::path& path) {
  return deserialize_records(read_text_file(path));
}

}  // namespace reframe

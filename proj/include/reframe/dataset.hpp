#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reframe/protocol.hpp"
#include "reframe/simulation.hpp"

namespace reframe {

struct SeedCorpus {
  std::vector<SeedCase> cases;
  std::string provenance;
};

enum class SeedFormat { kCsv, kJsonl };

// CSV needs a header naming thinking_trap and thought; case_id is optional and
// rows without one get "row-<n>". Blank lines are skipped in both formats.
// Throws MissingField listing every offending line, or DuplicateId.
SeedCorpus parse_seeds(std::string_view text, SeedFormat format, SeedSource source, std::string provenance);

// Format from the extension: .jsonl/.json read as JSONL, anything else as CSV.
SeedCorpus ingest_seeds(const std::filesystem::path& path, SeedSource source);

// RFC 4180 rows. Each row carries the 1-based line on which it starts.
struct CsvRow {
  size_t line = 0;
  std::vector<std::string> fields;
};
std::vector<CsvRow> parse_csv(std::string_view text);

enum class Split { kTrain, kValid, kTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

enum class SplitAssignment { kByOrder, kSeededShuffle };

struct SplitSpec {
  size_t train = 900;
  size_t valid = 100;
  size_t test = 300;
  SplitAssignment assignment = SplitAssignment::kByOrder;
  std::uint64_t shuffle_seed = 0;
};

using SplitMap = std::map<std::string, Split>;

// By order, the first `valid` training-source cases become valid and the next
// `train` become train. Test cases come only from the test-source corpus.
// Cases beyond the requested counts get no split. Throws CountOverflow.
SplitMap assign_splits(const SeedCorpus& training_source, const SeedCorpus& test_source, const SplitSpec& spec);

struct RecordMessage {
  Role role = Role::kClient;
  Stage stage = Stage::kSeparateFactsFeelings;
  std::string text;

  friend bool operator==(const RecordMessage&, const RecordMessage&) = default;
};

struct TrainingRecord {
  std::string case_id;
  Split split = Split::kTrain;
  std::string therapist_system_prompt;
  std::vector<RecordMessage> conversation;
  bool adversarial = false;

  friend bool operator==(const TrainingRecord&, const TrainingRecord&) = default;
};

void to_json(nlohmann::json& j, const TrainingRecord& record);
void from_json(const nlohmann::json& j, TrainingRecord& record);

struct BuildFailure {
  std::string case_id;
  RunOutcome outcome = RunOutcome::kAborted;
  std::optional<Stage> stage;
  std::string error;
};

struct BuildResult {
  std::vector<TrainingRecord> records;
  std::vector<BuildFailure> failures;
};

// Completed runs become records in input order; every other run, and any run
// whose case has no split, becomes a failure.
BuildResult collect_records(const std::vector<DialogueRun>& runs, const SplitMap& splits);

BuildResult build_corpus(const std::vector<SeedCase>& seeds, const SplitMap& splits, const BackendFactory& factory,
                         const SimulationConfig& config, int parallelism = 1);

struct Manifest {
  std::map<Split, size_t> counts;  // always holds all three splits
  std::string sha256;              // over the exported file bytes

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

void to_json(nlohmann::json& j, const Manifest& manifest);

std::string serialize_records(const std::vector<TrainingRecord>& records);
std::vector<TrainingRecord> deserialize_records(std::string_view text);

// Throws IoError naming the path.
Manifest export_jsonl(const std::vector<TrainingRecord>& records, const std::filesystem::path& path);
std::vector<TrainingRecord> import_jsonl(const std::filesystem::path& path);

}  // namespace reframe

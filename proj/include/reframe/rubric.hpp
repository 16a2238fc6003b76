#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reframe/gateway.hpp"
#include "reframe/protocol.hpp"

namespace reframe {

// Each criterion is scored 0..3.
struct DialogueScores {
  int empathy = 0;
  int logic = 0;
  int guidance = 0;
  int overall = 0;

  friend bool operator==(const DialogueScores&, const DialogueScores&) = default;
};

enum class OverallMode {
  kClosed,  // e>=2 && l>=2 covers every cell the tier table leaves open
  kStrict,  // cells outside the tier table raise GapCell
};

// Tiers, highest first: 3 if all are 3; 2 if e=3, l=3, g>=2; 1 if e>=2, l>=2; else 0.
// Throws OutOfRange for inputs outside 0..3.
int derive_overall(int empathy, int logic, int guidance, OverallMode mode = OverallMode::kClosed);

// The tier table's own definition of a cell, or nullopt for a gap cell.
std::optional<int> tier_table_overall(int empathy, int logic, int guidance);

DialogueScores make_scores(int empathy, int logic, int guidance, OverallMode mode = OverallMode::kClosed);

// False when overall disagrees with derive_overall (ingested records are flagged, not rejected).
bool overall_consistent(const DialogueScores& scores);

struct EvaluatorRecord {
  std::string evaluator_id;
  std::string dialogue_id;
  std::string model_tag;
  DialogueScores scores;

  friend bool operator==(const EvaluatorRecord&, const EvaluatorRecord&) = default;
};

// JSONL shape: {evaluator_id, dialogue_id, empathy, logic, guidance, overall} plus model_tag when known.
void to_json(nlohmann::json& j, const EvaluatorRecord& record);
void from_json(const nlohmann::json& j, EvaluatorRecord& record);

// Throws OutOfRange for scores outside 0..3 and DuplicateId for a repeated (evaluator, dialogue) pair.
std::vector<EvaluatorRecord> parse_score_records(std::string_view jsonl);

struct BlindItem {
  std::string blind_id;
  std::string dialogue_id;

  friend bool operator==(const BlindItem&, const BlindItem&) = default;
};

struct BlindBatch {
  std::vector<BlindItem> items;
  std::uint64_t rng_seed = 0;
};

struct TaggedDialogue {
  std::string dialogue_id;
  std::string model_tag;
};

// Ids are sorted before shuffling, so the permutation depends only on the id set and
// the seed. Blind ids are "b-" plus 12 hex digits and never contain a model tag.
// Throws DuplicateId.
BlindBatch make_blind_batch(const std::vector<TaggedDialogue>& dialogues, std::uint64_t rng_seed);

struct ModelMeans {
  std::string model_tag;
  size_t dialogues = 0;
  double empathy = 0;
  double logic = 0;
  double guidance = 0;
  double overall = 0;
};

struct AggregateReport {
  std::vector<ModelMeans> models;  // ordered by model tag
  std::vector<EvaluatorRecord> inconsistent;  // overall != derive_overall
};

// Mean over evaluators per dialogue, then over dialogues per model.
// Throws EmptyGroup for no records or a record without a model tag.
AggregateReport aggregate(const std::vector<EvaluatorRecord>& records);

// Aligned columns, values to three decimals.
std::string format_means_table(const std::vector<ModelMeans>& models);
std::string format_means_row(const ModelMeans& means);

struct DiffStats {
  double avg_abs_diff = 0;
  double std_dev = 0;
};

struct IaaReport {
  std::string rater_a;
  std::string rater_b;
  size_t dialogues = 0;
  DiffStats empathy;
  DiffStats logic;
  DiffStats guidance;
  DiffStats overall;
};

inline constexpr std::string_view kIaaFormula =
    "avg = mean(|a-b|); std = sqrt(sum((|a-b| - avg)^2) / (n-1)), 0 when n < 2";

// Both sets must cover the same dialogue ids. Throws MismatchedDialogueSets or DuplicateId.
IaaReport iaa(const std::vector<EvaluatorRecord>& rater_a, const std::vector<EvaluatorRecord>& rater_b);

nlohmann::json iaa_to_json(const IaaReport& report);
std::string format_iaa_table(const IaaReport& report);

struct ScoredExemplar {
  Transcript dialogue;
  DialogueScores scores;
};

// "empathy=N logic=N guidance=N" anywhere in the reply. Throws UnparseableScores when a
// key is missing or a value is outside 0..3.
DialogueScores parse_score_reply(std::string_view reply);

std::string build_scoring_prompt(const Transcript& dialogue, const std::vector<ScoredExemplar>& exemplars);

// Overall is derived locally. One re-ask on a bad reply, then UnparseableScores.
DialogueScores llm_score(const Transcript& dialogue, const std::vector<ScoredExemplar>& exemplars,
                         ChatBackend& backend, const std::string& model_id = "default");

std::string_view rubric_text();

}  // namespace reframe

#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "reframe/time.hpp"

namespace reframe {

inline constexpr int kPanasItems = 20;

enum class Polarity { kPositive, kNegative };
enum class PanasPhase { kPre, kPost };

std::string_view to_string(Polarity polarity);
std::string_view to_string(PanasPhase phase);
Polarity parse_polarity(std::string_view text);
PanasPhase parse_phase(std::string_view text);

struct PanasItem {
  int index = 0;
  std::string_view label;
  Polarity polarity = Polarity::kPositive;
};

// Items 1-10 positive, 11-20 negative.
const std::array<PanasItem, kPanasItems>& panas_items();
const PanasItem& panas_item(int index);

// 'A'..'E' (either case) -> 1..5. Throws OutOfRange.
int answer_from_letter(char letter);
char letter_from_answer(int answer);

struct PanasResponse {
  std::string client_id;
  PanasPhase phase = PanasPhase::kPre;
  std::map<int, int> answers;  // item index -> 1..5
  Timestamp completed_at{};

  friend bool operator==(const PanasResponse&, const PanasResponse&) = default;
};

// Throws IncompleteResponse naming the missing items, or OutOfRange for a bad item or answer.
void validate_response(const PanasResponse& response);

void to_json(nlohmann::json& j, const PanasResponse& response);
void from_json(const nlohmann::json& j, PanasResponse& response);

struct SubscaleScores {
  int positive_total = 0;
  int negative_total = 0;

  friend bool operator==(const SubscaleScores&, const SubscaleScores&) = default;
};

SubscaleScores score(const PanasResponse& response);

struct PanasDelta {
  std::array<int, kPanasItems> items{};  // [i] is item i+1, post - pre
  int positive = 0;
  int negative = 0;

  int at(int index) const { return items.at(static_cast<size_t>(index - 1)); }
};

// Throws PhaseMismatch or ClientMismatch, plus validate_response errors.
PanasDelta delta(const PanasResponse& pre, const PanasResponse& post);

// sum over negative items of |post - pre|, divided by the pre negative total.
double negative_fluctuation(const PanasResponse& pre, const PanasResponse& post);

// Sample (n-1) standard deviation of the ten negative-item deltas.
double client_negative_delta_stddev(const PanasResponse& pre, const PanasResponse& post);

using PanasPair = std::pair<PanasResponse, PanasResponse>;

struct GroupStats {
  std::string label;
  double avg_negative_fluctuation = 0;
  double avg_client_negative_delta_stddev = 0;
  size_t n_clients = 0;
};

// Unweighted means of the per-client values. Throws EmptyGroup.
GroupStats group_stats(const std::vector<PanasPair>& pairs, const std::string& label);

struct GroupSpec {
  std::string label;
  std::vector<std::string> clients;
};

std::vector<GroupSpec> parse_group_specs(const nlohmann::json& j);
std::vector<PanasResponse> parse_responses(const nlohmann::json& j);

// Pairs each listed client's pre and post response. Throws EmptyGroup when one is missing.
std::vector<PanasPair> pairs_for_group(const std::vector<PanasResponse>& responses, const GroupSpec& group);

nlohmann::json group_stats_to_json(const std::vector<GroupStats>& stats);
std::string format_group_table(const std::vector<GroupStats>& stats);

enum class AnovaGranularity { kPerItem, kPerClientTotal };

std::string_view to_string(AnovaGranularity granularity);
AnovaGranularity parse_granularity(std::string_view text);

struct AnovaResult {
  double f = 0;
  double p = 1;
  int df_between = 0;
  int df_within = 0;
  double eta_squared = 0;
  // Zero within-group variance: F is +inf with p = 0, or 0 with p = 1 when the means agree too.
  bool degenerate = false;
  AnovaGranularity granularity = AnovaGranularity::kPerItem;
};

// Throws InsufficientGroups unless there are >= 2 groups of >= 2 observations.
AnovaResult anova(const std::vector<std::vector<double>>& groups,
                  AnovaGranularity granularity = AnovaGranularity::kPerItem);

// Per item: all 20 answers of each client's response. Per client: each response's 20-item total.
std::vector<double> anova_observations(const std::vector<PanasResponse>& responses, AnovaGranularity granularity);

nlohmann::json anova_to_json(const AnovaResult& result);

// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
// P(F > f) for F(d1, d2).
double f_survival(double f, double d1, double d2);

struct RadarSeries {
  std::string name;   // "before" or "after"
  std::string color;  // render hint
  std::vector<int> values;  // one per axis, 1..5
};

struct RadarData {
  Polarity polarity = Polarity::kNegative;
  std::vector<std::string> axes;
  RadarSeries before;
  RadarSeries after;
};

RadarData radar_data(const PanasResponse& pre, const PanasResponse& post, Polarity polarity);
nlohmann::json radar_to_json(const RadarData& data);
// Standalone SVG: ten spokes, rings labelled 1-5, before/after polygons.
std::string radar_svg(const RadarData& data, const std::string& title = {});

// The administration script; {time_frame} is replaced by the given wording.
std::string panas_guidance(std::string_view time_frame = "over the past week");

}  // namespace reframe

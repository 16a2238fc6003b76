#include "reframe/panas.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <set>

#include "reframe/assets.hpp"
#include "reframe/error.hpp"

namespace reframe {

namespace {

using nlohmann::json;

constexpr std::array<PanasItem, kPanasItems> kItems = {{
    {1, "Interested", Polarity::kPositive},   {2, "Excited", Polarity::kPositive},
    {3, "Strong", Polarity::kPositive},       {4, "Enthusiastic", Polarity::kPositive},
    {5, "Proud", Polarity::kPositive},        {6, "Alert", Polarity::kPositive},
    {7, "Inspired", Polarity::kPositive},     {8, "Determined", Polarity::kPositive},
    {9, "Attentive", Polarity::kPositive},    {10, "Active", Polarity::kPositive},
    {11, "Distressed", Polarity::kNegative},  {12, "Upset", Polarity::kNegative},
    {13, "Guilty", Polarity::kNegative},      {14, "Scared", Polarity::kNegative},
    {15, "Hostile", Polarity::kNegative},     {16, "Irritable", Polarity::kNegative},
    {17, "Ashamed", Polarity::kNegative},     {18, "Nervous", Polarity::kNegative},
    {19, "Jittery", Polarity::kNegative},     {20, "Afraid", Polarity::kNegative},
}};

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<int> negative_deltas(const PanasResponse& pre, const PanasResponse& post) {
  const PanasDelta d = delta(pre, post);
  return {d.items.begin() + 10, d.items.end()};
}

// Continued fraction for the incomplete beta (modified Lentz).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

std::string_view to_string(Polarity polarity) { return polarity == Polarity::kPositive ? "positive" : "negative"; }
std::string_view to_string(PanasPhase phase) { return phase == PanasPhase::kPre ? "pre" : "post"; }

Polarity parse_polarity(std::string_view text) {
  if (text == "positive") return Polarity::kPositive;
  if (text == "negative") return Polarity::kNegative;
  throw Error(ErrorCode::kInvalidRequest, "unknown polarity '" + std::string(text) + "'");
}

PanasPhase parse_phase(std::string_view text) {
  if (text == "pre") return PanasPhase::kPre;
  if (text == "post") return PanasPhase::kPost;
  throw Error(ErrorCode::kPhaseMismatch, "unknown phase '" + std::string(text) + "'");
}

const std::array<PanasItem, kPanasItems>& panas_items() { return kItems; }

const PanasItem& panas_item(int index) {
  if (index < 1 || index > kPanasItems) throw Error(ErrorCode::kOutOfRange, "item " + std::to_string(index));
  return kItems[static_cast<size_t>(index - 1)];
}

int answer_from_letter(char letter) {
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(letter)));
  if (up < 'A' || up > 'E') throw Error(ErrorCode::kOutOfRange, std::string("answer letter '") + letter + "'");
  return up - 'A' + 1;
}

char letter_from_answer(int answer) {
  if (answer < 1 || answer > 5) throw Error(ErrorCode::kOutOfRange, "answer " + std::to_string(answer));
  return static_cast<char>('A' + answer - 1);
}

void validate_response(const PanasResponse& r) {
  std::string missing;
  for (int i = 1; i <= kPanasItems; ++i) {
    const auto it = r.answers.find(i);
    if (it == r.answers.end()) {
      missing += (missing.empty() ? "" : ",") + std::to_string(i);
    } else if (it->second < 1 || it->second > 5) {
      throw Error(ErrorCode::kOutOfRange,
                  r.client_id + " item " + std::to_string(i) + " answer " + std::to_string(it->second));
    }
  }
  for (const auto& [item, answer] : r.answers) {
    if (item < 1 || item > kPanasItems) throw Error(ErrorCode::kOutOfRange, "item " + std::to_string(item));
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::kIncompleteResponse, r.client_id + " " + std::string(to_string(r.phase)) +
                                                    " missing items " + missing);
  }
}

void to_json(json& j, const PanasResponse& r) {
  json answers = json::object();
  for (const auto& [item, answer] : r.answers) answers[std::to_string(item)] = answer;
  j = json{{"client_id", r.client_id},
           {"phase", to_string(r.phase)},
           {"answers", std::move(answers)},
           {"completed_at", format_utc(r.completed_at)}};
}

void from_json(const json& j, PanasResponse& r) {
  r.client_id = j.at("client_id").get<std::string>();
  r.phase = parse_phase(j.at("phase").get<std::string>());
  r.answers.clear();
  for (const auto& [key, value] : j.at("answers").items()) {
    int item = 0;
    try {
      item = std::stoi(key);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kOutOfRange, "item key '" + key + "'");
    }
    r.answers[item] = value.is_string() && value.get<std::string>().size() == 1
                          ? answer_from_letter(value.get<std::string>()[0])
                          : value.get<int>();
  }
  r.completed_at = j.contains("completed_at") ? parse_utc(j.at("completed_at").get<std::string>()) : Timestamp{};
}

SubscaleScores score(const PanasResponse& r) {
  validate_response(r);
  SubscaleScores s;
  for (const auto& [item, answer] : r.answers) {
    (item <= 10 ? s.positive_total : s.negative_total) += answer;
  }
  return s;
}

PanasDelta delta(const PanasResponse& pre, const PanasResponse& post) {
  if (pre.phase != PanasPhase::kPre || post.phase != PanasPhase::kPost) {
    throw Error(ErrorCode::kPhaseMismatch, "expected a pre response followed by a post response");
  }
  if (pre.client_id != post.client_id) {
    throw Error(ErrorCode::kClientMismatch, "'" + pre.client_id + "' vs '" + post.client_id + "'");
  }
  validate_response(pre);
  validate_response(post);
  PanasDelta d;
  for (int i = 1; i <= kPanasItems; ++i) {
    const int v = post.answers.at(i) - pre.answers.at(i);
    d.items[static_cast<size_t>(i - 1)] = v;
    (i <= 10 ? d.positive : d.negative) += v;
  }
  return d;
}

double negative_fluctuation(const PanasResponse& pre, const PanasResponse& post) {
  int moved = 0;
  for (int v : negative_deltas(pre, post)) moved += std::abs(v);
  return static_cast<double>(moved) / score(pre).negative_total;
}

double client_negative_delta_stddev(const PanasResponse& pre, const PanasResponse& post) {
  const auto d = negative_deltas(pre, post);
  double mean = 0;
  for (int v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double ss = 0;
  for (int v : d) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(d.size() - 1));
}

GroupStats group_stats(const std::vector<PanasPair>& pairs, const std::string& label) {
  if (pairs.empty()) throw Error(ErrorCode::kEmptyGroup, "group '" + label + "' has no complete pairs");
  GroupStats g;
  g.label = label;
  g.n_clients = pairs.size();
  for (const auto& [pre, post] : pairs) {
    g.avg_negative_fluctuation += negative_fluctuation(pre, post);
    g.avg_client_negative_delta_stddev += client_negative_delta_stddev(pre, post);
  }
  g.avg_negative_fluctuation /= static_cast<double>(pairs.size());
  g.avg_client_negative_delta_stddev /= static_cast<double>(pairs.size());
  return g;
}

std::vector<GroupSpec> parse_group_specs(const json& j) {
  std::vector<GroupSpec> out;
  for (const auto& g : j) out.push_back({g.at("label").get<std::string>(), g.at("clients").get<std::vector<std::string>>()});
  return out;
}

std::vector<PanasResponse> parse_responses(const json& j) {
  return j.get<std::vector<PanasResponse>>();
}

std::vector<PanasPair> pairs_for_group(const std::vector<PanasResponse>& responses, const GroupSpec& group) {
  std::vector<PanasPair> pairs;
  for (const auto& client : group.clients) {
    const PanasResponse* pre = nullptr;
    const PanasResponse* post = nullptr;
    for (const auto& r : responses) {
      if (r.client_id != client) continue;
      (r.phase == PanasPhase::kPre ? pre : post) = &r;
    }
    if (!pre || !post) {
      throw Error(ErrorCode::kEmptyGroup, "group '" + group.label + "': " + client + " lacks a " +
                                              (pre ? "post" : "pre") + " response");
    }
    pairs.emplace_back(*pre, *post);
  }
  return pairs;
}

json group_stats_to_json(const std::vector<GroupStats>& stats) {
  json out = json::array();
  for (const auto& g : stats) {
    out.push_back({{"label", g.label},
                   {"n_clients", g.n_clients},
                   {"avg_negative_fluctuation", g.avg_negative_fluctuation},
                   {"avg_client_negative_delta_stddev", g.avg_client_negative_delta_stddev}});
  }
  return out;
}

std::string format_group_table(const std::vector<GroupStats>& stats) {
  size_t width = 5;
  for (const auto& g : stats) width = std::max(width, g.label.size());
  auto pad = [](std::string s, size_t w, bool left) {
    if (s.size() < w) left ? s.insert(0, w - s.size(), ' ') : s.append(w - s.size(), ' ');
    return s;
  };
  std::string out = pad("Group", width, false) + "  Clients  Neg.Fluctuation  Neg.Delta.Std\n";
  for (const auto& g : stats) {
    out += pad(g.label, width, false) + "  " + pad(std::to_string(g.n_clients), 7, true) + "  " +
           pad(fixed(g.avg_negative_fluctuation, 3), 15, true) + "  " +
           pad(fixed(g.avg_client_negative_delta_stddev, 3), 13, true) + "\n";
  }
  return out;
}

std::string_view to_string(AnovaGranularity g) {
  return g == AnovaGranularity::kPerItem ? "per-item" : "per-client-total";
}

AnovaGranularity parse_granularity(std::string_view text) {
  if (text == "per-item") return AnovaGranularity::kPerItem;
  if (text == "per-client-total") return AnovaGranularity::kPerClientTotal;
  throw Error(ErrorCode::kInvalidConfig, "unknown granularity '" + std::string(text) + "'");
}

double incomplete_beta(double a, double b, double x) {
  if (a <= 0 || b <= 0) throw Error(ErrorCode::kOutOfRange, "incomplete_beta needs a, b > 0");
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1) / (a + b + 2)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double f_survival(double f, double d1, double d2) {
  if (std::isinf(f)) return 0;
  if (f <= 0) return 1;
  return incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

AnovaResult anova(const std::vector<std::vector<double>>& groups, AnovaGranularity granularity) {
  if (groups.size() < 2) throw Error(ErrorCode::kInsufficientGroups, "anova needs at least 2 groups");
  size_t n = 0;
  double grand = 0;
  for (size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].size() < 2) {
      throw Error(ErrorCode::kInsufficientGroups, "group " + std::to_string(i + 1) + " has fewer than 2 observations");
    }
    for (double y : groups[i]) grand += y;
    n += groups[i].size();
  }
  grand /= static_cast<double>(n);

  double ssb = 0;
  double ssw = 0;
  for (const auto& g : groups) {
    double mean = 0;
    for (double y : g) mean += y;
    mean /= static_cast<double>(g.size());
    ssb += static_cast<double>(g.size()) * (mean - grand) * (mean - grand);
    for (double y : g) ssw += (y - mean) * (y - mean);
  }

  AnovaResult r;
  r.granularity = granularity;
  r.df_between = static_cast<int>(groups.size()) - 1;
  r.df_within = static_cast<int>(n - groups.size());
  const double sst = ssb + ssw;
  r.eta_squared = sst > 0 ? ssb / sst : 0;
  // Rounding noise from the mean subtraction; relative to the data scale.
  const double scale = std::max(1.0, grand * grand) * static_cast<double>(n);
  if (ssw <= 1e-12 * scale) {
    r.degenerate = true;
    if (ssb <= 1e-12 * scale) {
      r.f = 0;
      r.p = 1;
    } else {
      r.f = std::numeric_limits<double>::infinity();
      r.p = 0;
    }
    return r;
  }
  r.f = (ssb / r.df_between) / (ssw / r.df_within);
  r.p = std::clamp(f_survival(r.f, r.df_between, r.df_within), 0.0, 1.0);
  return r;
}

std::vector<double> anova_observations(const std::vector<PanasResponse>& responses, AnovaGranularity granularity) {
  std::vector<double> out;
  for (const auto& r : responses) {
    validate_response(r);
    if (granularity == AnovaGranularity::kPerItem) {
      for (const auto& [item, answer] : r.answers) out.push_back(answer);
    } else {
      const auto s = score(r);
      out.push_back(s.positive_total + s.negative_total);
    }
  }
  return out;
}

json anova_to_json(const AnovaResult& r) {
  json j{{"df_between", r.df_between},   {"df_within", r.df_within},
         {"eta_squared", r.eta_squared}, {"degenerate", r.degenerate},
         {"granularity", to_string(r.granularity)}, {"p", r.p}};
  // JSON has no infinity.
  if (std::isinf(r.f)) {
    j["F"] = "inf";
  } else {
    j["F"] = r.f;
  }
  return j;
}

RadarData radar_data(const PanasResponse& pre, const PanasResponse& post, Polarity polarity) {
  delta(pre, post);
  RadarData d;
  d.polarity = polarity;
  d.before = {"before", "red", {}};
  d.after = {"after", "blue", {}};
  for (const auto& item : kItems) {
    if (item.polarity != polarity) continue;
    d.axes.emplace_back(item.label);
    d.before.values.push_back(pre.answers.at(item.index));
    d.after.values.push_back(post.answers.at(item.index));
  }
  return d;
}

json radar_to_json(const RadarData& d) {
  auto series = [](const RadarSeries& s) {
    // Closed polygon: the first vertex repeats at the end.
    std::vector<int> ring = s.values;
    if (!ring.empty()) ring.push_back(ring.front());
    return json{{"name", s.name}, {"color", s.color}, {"values", s.values}, {"polygon", ring}};
  };
  return json{{"polarity", to_string(d.polarity)},
              {"axes", d.axes},
              {"scale", {1, 5}},
              {"series", {series(d.before), series(d.after)}}};
}

std::string radar_svg(const RadarData& d, const std::string& title) {
  constexpr double kCx = 200, kCy = 210, kR = 150;
  const size_t n = d.axes.size();
  auto point = [&](size_t i, double value) {
    const double angle = -std::numbers::pi / 2 + 2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    const double r = kR * value / 5.0;
    return std::pair{kCx + r * std::cos(angle), kCy + r * std::sin(angle)};
  };
  auto xy = [](std::pair<double, double> p) { return fixed(p.first, 1) + "," + fixed(p.second, 1); };
  auto escape = [](const std::string& s) {
    std::string out;
    for (char c : s) {
      switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
      }
    }
    return out;
  };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"420\" viewBox=\"0 0 400 420\">\n";
  if (!title.empty()) svg += "<text x=\"200\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) + "</text>\n";
  for (int ring = 1; ring <= 5; ++ring) {
    std::string pts;
    for (size_t i = 0; i < n; ++i) pts += (i ? " " : "") + xy(point(i, ring));
    svg += "<polygon points=\"" + pts + "\" fill=\"none\" stroke=\"#ccc\"/>\n";
    const auto label = point(0, ring);
    svg += "<text x=\"" + fixed(label.first + 4, 1) + "\" y=\"" + fixed(label.second, 1) +
           "\" font-size=\"9\" fill=\"#888\">" + std::to_string(ring) + "</text>\n";
  }
  for (size_t i = 0; i < n; ++i) {
    const auto end = point(i, 5);
    svg += "<line x1=\"" + fixed(kCx, 1) + "\" y1=\"" + fixed(kCy, 1) + "\" x2=\"" + fixed(end.first, 1) + "\" y2=\"" +
           fixed(end.second, 1) + "\" stroke=\"#ccc\"/>\n";
    const auto label = point(i, 5.6);
    svg += "<text x=\"" + fixed(label.first, 1) + "\" y=\"" + fixed(label.second, 1) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + escape(d.axes[i]) + "</text>\n";
  }
  for (const auto* s : {&d.before, &d.after}) {
    std::string pts;
    for (size_t i = 0; i < n; ++i) pts += (i ? " " : "") + xy(point(i, s->values[i]));
    svg += "<polygon class=\"" + s->name + "\" points=\"" + pts + "\" fill=\"" + s->color + "\" fill-opacity=\"0.25\" stroke=\"" +
           s->color + "\" stroke-width=\"2\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::string panas_guidance(std::string_view time_frame) {
  std::string text(embedded_asset("panas_guidance.txt").value_or(""));
  constexpr std::string_view kSlot = "{time_frame}";
  for (auto pos = text.find(kSlot); pos != std::string::npos; pos = text.find(kSlot, pos + time_frame.size())) {
    text.replace(pos, kSlot.size(), time_frame);
  }
  return text;
}

}  // namespace reframe

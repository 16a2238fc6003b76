#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/distributions/fisher_f.hpp>

#include "fixtures.hpp"
#include "reframe/error.hpp"
#include "reframe/io.hpp"
#include "reframe/panas.hpp"

using namespace reframe;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kIo;
}

PanasResponse uniform(const std::string& client, PanasPhase phase, int value) {
  PanasResponse r{client, phase, {}, {}};
  for (int i = 1; i <= kPanasItems; ++i) r.answers[i] = value;
  return r;
}

std::vector<GroupSpec> load_groups(const std::string& name) {
  return parse_group_specs(json::parse(read_text_file(fixtures::source_path("data/fixtures/" + name))));
}

// Direct sums of squares, no shortcuts shared with the library.
struct BruteAnova {
  double f;
  double df1;
  double df2;
};

BruteAnova brute_anova(const std::vector<std::vector<double>>& groups) {
  double total = 0;
  size_t n = 0;
  for (const auto& g : groups) {
    for (double x : g) total += x;
    n += g.size();
  }
  const double grand = total / static_cast<double>(n);
  double ssb = 0;
  double ssw = 0;
  for (const auto& g : groups) {
    const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
    ssb += static_cast<double>(g.size()) * (mean - grand) * (mean - grand);
    for (double x : g) ssw += (x - mean) * (x - mean);
  }
  const double df1 = static_cast<double>(groups.size() - 1);
  const double df2 = static_cast<double>(n - groups.size());
  return {(ssb / df1) / (ssw / df2), df1, df2};
}

double boost_p(double f, double d1, double d2) {
  return boost::math::cdf(boost::math::complement(boost::math::fisher_f_distribution<double>(d1, d2), f));
}

const std::vector<std::vector<double>> kTextbook = {
    {6, 8, 4, 5, 3, 4}, {8, 12, 9, 11, 6, 8}, {13, 9, 11, 8, 7, 12}};

}  // namespace

TEST_CASE("items and letters") {
  const auto& items = panas_items();
  for (int i = 1; i <= kPanasItems; ++i) {
    CHECK(items[static_cast<size_t>(i - 1)].index == i);
    CHECK(panas_item(i).polarity == (i <= 10 ? Polarity::kPositive : Polarity::kNegative));
  }
  CHECK(panas_item(1).label == "Interested");
  CHECK(panas_item(11).label == "Distressed");
  CHECK(panas_item(20).label == "Afraid");
  CHECK(code_of([] { panas_item(21); }) == ErrorCode::kOutOfRange);
  CHECK(answer_from_letter('A') == 1);
  CHECK(answer_from_letter('e') == 5);
  CHECK(letter_from_answer(3) == 'C');
  CHECK(code_of([] { answer_from_letter('F'); }) == ErrorCode::kOutOfRange);
  CHECK(code_of([] { letter_from_answer(0); }) == ErrorCode::kOutOfRange);
}

TEST_CASE("response validation and json") {
  PanasResponse r = uniform("c", PanasPhase::kPre, 3);
  CHECK_NOTHROW(validate_response(r));
  r.answers.erase(4);
  r.answers.erase(17);
  try {
    validate_response(r);
    FAIL("expected IncompleteResponse");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIncompleteResponse);
    CHECK(std::string(e.what()).find("4,17") != std::string::npos);
  }
  r = uniform("c", PanasPhase::kPre, 3);
  r.answers[5] = 6;
  CHECK(code_of([&] { validate_response(r); }) == ErrorCode::kOutOfRange);
  r.answers[5] = 3;
  r.answers[21] = 3;
  CHECK(code_of([&] { validate_response(r); }) == ErrorCode::kOutOfRange);

  const PanasResponse& fixture = fixtures::response(1, PanasPhase::kPre);
  CHECK(json(fixture).get<PanasResponse>() == fixture);
  json letters = json(uniform("c", PanasPhase::kPost, 1));
  letters["answers"]["2"] = "D";
  CHECK(letters.get<PanasResponse>().answers.at(2) == 4);
}

TEST_CASE("subscale totals stay in bounds") {
  CHECK(score(uniform("c", PanasPhase::kPre, 1)) == SubscaleScores{10, 10});
  CHECK(score(uniform("c", PanasPhase::kPre, 5)) == SubscaleScores{50, 50});
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> answer(1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    PanasResponse r{"c", PanasPhase::kPre, {}, {}};
    for (int i = 1; i <= kPanasItems; ++i) r.answers[i] = answer(rng);
    const auto s = score(r);
    CHECK(s.positive_total >= 10);
    CHECK(s.positive_total <= 50);
    CHECK(s.negative_total >= 10);
    CHECK(s.negative_total <= 50);
  }
}

TEST_CASE("fixture deltas") {
  const auto d6 = delta(fixtures::response(6, PanasPhase::kPre), fixtures::response(6, PanasPhase::kPost));
  CHECK(d6.at(11) == 1 - 5);  // Distressed 5 -> 1
  const auto d3 = delta(fixtures::response(3, PanasPhase::kPre), fixtures::response(3, PanasPhase::kPost));
  CHECK(d3.at(12) == 5 - 4);  // Upset 4 -> 5
  CHECK(code_of([] {
          delta(fixtures::response(1, PanasPhase::kPost), fixtures::response(1, PanasPhase::kPre));
        }) == ErrorCode::kPhaseMismatch);
  CHECK(code_of([] {
          delta(fixtures::response(1, PanasPhase::kPre), fixtures::response(2, PanasPhase::kPost));
        }) == ErrorCode::kClientMismatch);
}

TEST_CASE("per-client values match the independent computation") {
  struct Expected {
    int pre_negative;
    int pre_positive;
    int moved;
    double stddev;
  };
  const Expected expected[] = {{28, 32, 14, 0.5163977795}, {21, 24, 8, 1.032795559},  {38, 13, 9, 1.1595018087},
                               {26, 21, 5, 0.7378647874},  {27, 27, 5, 0.7378647874}, {33, 33, 21, 1.7288403307},
                               {27, 23, 4, 0.632455532},   {38, 23, 2, 0.4714045208}};
  for (int c = 1; c <= 8; ++c) {
    CAPTURE(c);
    const auto& pre = fixtures::response(c, PanasPhase::kPre);
    const auto& post = fixtures::response(c, PanasPhase::kPost);
    const auto& e = expected[c - 1];
    CHECK(score(pre).negative_total == e.pre_negative);
    CHECK(score(pre).positive_total == e.pre_positive);
    CHECK(negative_fluctuation(pre, post) == doctest::Approx(static_cast<double>(e.moved) / e.pre_negative));
    CHECK(client_negative_delta_stddev(pre, post) == doctest::Approx(e.stddev).epsilon(1e-9));
  }
}

TEST_CASE("group statistics") {
  const auto groups = load_groups("groups.json");
  REQUIRE(groups.size() == 4);
  const double fluct[] = {0.4405, 0.2146, 0.4108, 0.1004};
  const double stds[] = {0.7746, 0.9487, 1.2334, 0.5519};
  std::vector<GroupStats> all;
  for (size_t i = 0; i < groups.size(); ++i) {
    const auto stats = group_stats(pairs_for_group(fixtures::client_change(), groups[i]), groups[i].label);
    CHECK(stats.n_clients == 2);
    CHECK(std::abs(stats.avg_negative_fluctuation - fluct[i]) < 0.0005);
    CHECK(std::abs(stats.avg_client_negative_delta_stddev - stds[i]) < 0.0005);
    all.push_back(stats);
  }
  const std::string table = format_group_table(all);
  CHECK(table.find("0.411") != std::string::npos);
  CHECK(table.find("1.233") != std::string::npos);
  CHECK(group_stats_to_json(all).size() == 4);

  CHECK(code_of([] { group_stats({}, "x"); }) == ErrorCode::kEmptyGroup);
  CHECK(code_of([] { pairs_for_group(fixtures::client_change(), GroupSpec{"g", {"client-99"}}); }) ==
        ErrorCode::kEmptyGroup);
}

TEST_CASE("no change means no fluctuation") {
  const auto pre = fixtures::response(4, PanasPhase::kPre);
  auto post = pre;
  post.phase = PanasPhase::kPost;
  CHECK(negative_fluctuation(pre, post) == 0.0);
  CHECK(client_negative_delta_stddev(pre, post) == 0.0);
}

TEST_CASE("anova on the textbook case") {
  const auto r = anova(kTextbook);
  const auto brute = brute_anova(kTextbook);
  CHECK(r.df_between == 2);
  CHECK(r.df_within == 15);
  CHECK(r.f == doctest::Approx(brute.f).epsilon(1e-12));
  CHECK(r.f == doctest::Approx(9.264705882352942).epsilon(1e-12));
  CHECK(std::abs(r.p - boost_p(brute.f, brute.df1, brute.df2)) < 1e-9);
  CHECK(std::abs(r.p - 0.002398777329392905) < 1e-9);
  CHECK(r.eta_squared == doctest::Approx(0.5526315789).epsilon(1e-8));
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("f survival agrees with boost across degrees of freedom") {
  for (double d1 : {1.0, 2.0, 3.0, 7.0}) {
    for (double d2 : {2.0, 5.0, 15.0, 117.0, 400.0}) {
      for (double f : {0.05, 0.5, 1.0, 2.5, 9.0, 40.0}) {
        CAPTURE(d1);
        CAPTURE(d2);
        CAPTURE(f);
        CHECK(std::abs(f_survival(f, d1, d2) - boost_p(f, d1, d2)) < 1e-10);
      }
    }
  }
  CHECK(f_survival(0.0, 2, 10) == 1.0);
  CHECK(incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(incomplete_beta(2, 3, 1.0) == 1.0);
  // I_x(1, 1) = x
  CHECK(incomplete_beta(1, 1, 0.37) == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("anova invariances") {
  const auto base = anova(kTextbook);
  auto shifted = kTextbook;
  for (auto& g : shifted) {
    for (auto& x : g) x += 41.5;
  }
  CHECK(anova(shifted).p == doctest::Approx(base.p).epsilon(1e-9));
  for (double a : {-3.0, 0.25, 7.0}) {
    auto scaled = kTextbook;
    for (auto& g : scaled) {
      for (auto& x : g) x = a * x - 2.0;
    }
    CHECK(anova(scaled).f == doctest::Approx(base.f).epsilon(1e-9));
  }
  auto reordered = kTextbook;
  std::swap(reordered[0], reordered[2]);
  CHECK(anova(reordered).f == doctest::Approx(base.f).epsilon(1e-12));
}

TEST_CASE("anova edge cases") {
  const auto same = anova({{1, 2, 3}, {1, 2, 3}});
  CHECK(same.f == 0.0);
  CHECK(same.p == doctest::Approx(1.0));
  const auto flat = anova({{2, 2}, {5, 5}});
  CHECK(flat.degenerate);
  CHECK(std::isinf(flat.f));
  CHECK(flat.p == 0.0);
  CHECK(anova_to_json(flat).at("F") == "inf");
  const auto constant = anova({{4, 4}, {4, 4}});
  CHECK(constant.degenerate);
  CHECK(constant.f == 0.0);
  CHECK(constant.p == 1.0);
  CHECK(code_of([] { anova({{1, 2, 3}}); }) == ErrorCode::kInsufficientGroups);
  CHECK(code_of([] { anova({{1, 2}, {3}}); }) == ErrorCode::kInsufficientGroups);
}

TEST_CASE("pre-test groups are not significantly different") {
  const auto groups = load_groups("pretest_groups.json");
  std::vector<std::vector<double>> per_item;
  std::vector<std::vector<double>> per_client;
  for (const auto& g : groups) {
    std::vector<PanasResponse> pres;
    for (const auto& [pre, post] : pairs_for_group(fixtures::client_change(), g)) pres.push_back(pre);
    per_item.push_back(anova_observations(pres, AnovaGranularity::kPerItem));
    per_client.push_back(anova_observations(pres, AnovaGranularity::kPerClientTotal));
  }
  CHECK(per_item[0].size() == 40);
  const auto r = anova(per_item, AnovaGranularity::kPerItem);
  CHECK(r.df_between == 2);
  CHECK(r.df_within == 117);
  CHECK(r.f == doctest::Approx(2.50908).epsilon(1e-5));
  CHECK(r.p == doctest::Approx(0.0857118).epsilon(1e-5));
  CHECK(r.p > 0.05);
  CHECK(std::abs(r.p - boost_p(r.f, 2, 117)) < 1e-9);

  const auto totals = anova(per_client, AnovaGranularity::kPerClientTotal);
  CHECK(totals.df_within == 3);
  CHECK(totals.f == doctest::Approx(brute_anova(per_client).f).epsilon(1e-12));
  CHECK(anova_to_json(totals).at("granularity") == "per-client-total");
}

TEST_CASE("radar data and svg") {
  const auto& pre = fixtures::response(6, PanasPhase::kPre);
  const auto& post = fixtures::response(6, PanasPhase::kPost);
  const auto neg = radar_data(pre, post, Polarity::kNegative);
  REQUIRE(neg.axes.size() == 10);
  CHECK(neg.axes[0] == "Distressed");
  CHECK(neg.before.values[0] == 5);
  CHECK(neg.after.values[0] == 1);
  CHECK(neg.before.color == "red");
  CHECK(neg.after.color == "blue");
  const auto pos = radar_data(pre, post, Polarity::kPositive);
  CHECK(pos.axes[0] == "Interested");

  const json j = radar_to_json(neg);
  CHECK(j.at("scale") == json::array({1, 5}));
  const auto& poly = j.at("series")[0].at("polygon");
  CHECK(poly.size() == 11);
  CHECK(poly.front() == poly.back());

  const std::string svg = radar_svg(neg, "Client <6>");
  CHECK(svg.starts_with("<svg"));
  CHECK(svg.find("&lt;6&gt;") != std::string::npos);
  CHECK(svg.find("Distressed") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("guidance text") {
  const std::string g = panas_guidance("today");
  CHECK_FALSE(g.empty());
  CHECK(g.find("{time_frame}") == std::string::npos);
  CHECK(g.find("today") != std::string::npos);
  CHECK(panas_guidance().find("over the past week") != std::string::npos);
}

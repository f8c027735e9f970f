#include <doctest.h>

#include <algorithm>
#include <random>

#include "confroute/routing.hpp"
#include "support/test_util.hpp"

using namespace confroute;
using namespace confroute::routing;

namespace {

confidence::ConfidenceScore score_of(double value) {
  return {value, confidence::Method::self_ref};
}

// Exhaustive sort-and-count oracle: how many scores fall strictly below t.
std::size_t oracle_routed(const std::vector<double>& scores, double threshold) {
  return std::count_if(scores.begin(), scores.end(),
                       [&](double s) { return s < threshold; });
}

struct Fixture {
  Dataset truths;
  std::vector<PredictionRecord> local;
  std::vector<PredictionRecord> remote;
  std::vector<confidence::ConfidenceScore> scores;
};

// Four queries: local answers correctly on q0/q1 only, remote on all.
Fixture four_query_fixture() {
  Fixture fixture;
  const double score_values[] = {0.9, 0.8, 0.2, 0.1};
  for (int i = 0; i < 4; ++i) {
    QueryRecord record;
    record.id = "q" + std::to_string(i);
    record.prompt = "p";
    record.choices = std::vector<Choice>{{"A", "x"}, {"B", "y"}};
    record.ground_truth = AnswerValue::choice("A");
    fixture.truths.records.push_back(record);

    PredictionRecord local;
    local.query_id = record.id;
    local.model_id = "local";
    local.answer = i < 2 ? "A" : "B";
    local.latency_s = 0.02;
    local.token_count = 2;  // 0.01 s/token
    fixture.local.push_back(local);

    PredictionRecord remote;
    remote.query_id = record.id;
    remote.model_id = "remote";
    remote.answer = "A";
    remote.latency_s = 0.03;
    remote.token_count = 1;  // 0.03 s/token
    fixture.remote.push_back(remote);

    fixture.scores.push_back(score_of(score_values[i]));
  }
  return fixture;
}

}  // namespace

TEST_CASE("quantile thresholds route floor(p*N/steps) items") {
  std::vector<double> scores;
  for (int i = 1; i <= 10; ++i) scores.push_back(i / 10.0);

  const auto thresholds = quantile_thresholds(scores, 20);
  REQUIRE(thresholds.size() == 21);

  CHECK(thresholds[0] == doctest::Approx(0.1));
  CHECK(oracle_routed(scores, thresholds[0]) == 0);  // minimum routes nothing
  CHECK(thresholds[20] > 1.0);
  CHECK(oracle_routed(scores, thresholds[20]) == 10);  // sentinel routes all

  for (int p = 0; p <= 20; ++p) {
    const auto expected = static_cast<std::size_t>(p * 10 / 20);
    CHECK(oracle_routed(scores, thresholds[p]) == expected);
  }
  // Midpoint, pinned by the oracle: rank floor(10*10/20) = 5 -> 0.6.
  CHECK(thresholds[10] == doctest::Approx(0.6));
}

TEST_CASE("quantile thresholds are exact on a tie-free shuffled sample") {
  std::vector<double> scores(1000);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = static_cast<double>(i) / 1000.0 + 1e-4;
  }
  std::mt19937_64 rng(8);
  std::shuffle(scores.begin(), scores.end(), rng);

  const auto thresholds = quantile_thresholds(scores, 20);
  for (int p = 0; p <= 20; ++p) {
    CHECK(oracle_routed(scores, thresholds[p]) ==
          static_cast<std::size_t>(p) * 1000 / 20);
  }
}

TEST_CASE("routed sets grow with the threshold") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Coarse grid to force ties.
  std::vector<double> scores(137);
  for (double& s : scores) s = std::round(unit(rng) * 20.0) / 20.0;
  const auto thresholds = quantile_thresholds(scores, 10);
  std::size_t previous = 0;
  for (double t : thresholds) {
    const std::size_t routed = oracle_routed(scores, t);
    CHECK(routed >= previous);
    previous = routed;
  }
}

TEST_CASE("quantile policies carry their source quantile") {
  std::vector<double> scores;
  for (int i = 1; i <= 10; ++i) scores.push_back(i / 10.0);
  const auto thresholds = quantile_thresholds(scores, 20);
  const auto policies = quantile_policies(scores, 20);
  REQUIRE(policies.size() == thresholds.size());
  for (std::size_t p = 0; p < policies.size(); ++p) {
    CHECK(policies[p].threshold == thresholds[p]);
    CHECK(policies[p].quantile_step == static_cast<int>(p));
  }
}

TEST_CASE("route uses a strict less-than rule") {
  CHECK(route(score_of(0.4), {0.5, std::nullopt}) == Decision::remote);
  CHECK(route(score_of(0.5), {0.5, std::nullopt}) == Decision::local);
  const double sentinel = std::nextafter(1.0, 2.0);
  CHECK(route(score_of(1.0), {sentinel, std::nullopt}) == Decision::remote);
}

TEST_CASE("tradeoff curve matches the hand-enumerated outcome") {
  const Fixture fixture = four_query_fixture();
  const double thresholds[] = {0.5};
  const auto curve = tradeoff_curve(fixture.local, fixture.remote, fixture.scores,
                                    fixture.truths, thresholds);
  REQUIRE(curve.points.size() == 1);
  // Scores 0.2 and 0.1 route; remote fixes both wrong local answers.
  CHECK(curve.points[0].routing_rate == doctest::Approx(0.5));
  CHECK(curve.points[0].accuracy == doctest::Approx(1.0));
  CHECK(curve.points[0].mean_latency_s == doctest::Approx(0.5 * 0.01 + 0.5 * 0.03));
}

TEST_CASE("tradeoff curve endpoints are the pure systems") {
  const Fixture fixture = four_query_fixture();
  std::vector<double> values;
  for (const auto& s : fixture.scores) values.push_back(s.value);
  const auto thresholds = quantile_thresholds(values, 20);
  const auto curve = tradeoff_curve(fixture.local, fixture.remote, fixture.scores,
                                    fixture.truths, thresholds);
  CHECK(curve.points.front().routing_rate == doctest::Approx(0.0));
  CHECK(curve.points.front().accuracy == doctest::Approx(0.5));  // pure local
  CHECK(curve.points.front().mean_latency_s == doctest::Approx(0.01));
  CHECK(curve.points.back().routing_rate == doctest::Approx(1.0));
  CHECK(curve.points.back().accuracy == doctest::Approx(1.0));  // pure remote
  CHECK(curve.points.back().mean_latency_s == doctest::Approx(0.03));
}

TEST_CASE("tradeoff curve rejects unaligned inputs") {
  Fixture fixture = four_query_fixture();
  fixture.local.pop_back();
  const double thresholds[] = {0.5};
  CHECK_THROWS_AS(tradeoff_curve(fixture.local, fixture.remote, fixture.scores,
                                 fixture.truths, thresholds),
                  AlignmentError);
}

TEST_CASE("random baseline is the affine mixture") {
  const double rates[] = {0.0, 0.5, 1.0};
  const auto points = random_baseline(0.6, 0.8, rates);
  REQUIRE(points.size() == 3);
  CHECK(points[0].accuracy == doctest::Approx(0.6));
  CHECK(points[1].accuracy == doctest::Approx(0.7));
  CHECK(points[2].accuracy == doctest::Approx(0.8));
  // Collinearity: midpoint equals the average of the endpoints.
  CHECK(points[1].accuracy ==
        doctest::Approx((points[0].accuracy + points[2].accuracy) / 2.0));
}

TEST_CASE("parity routing rate scans for the smallest sufficient rate") {
  TradeoffCurve curve;
  curve.points = {{0.0, 0.60, 0.0}, {0.5, 0.75, 0.0}, {1.0, 0.74, 0.0}};
  CHECK(parity_routing_rate(curve, 0.74) == doctest::Approx(0.5));
  CHECK(parity_routing_rate(curve, 0.60) == doctest::Approx(0.0));
  CHECK_FALSE(parity_routing_rate(curve, 0.99).has_value());
}

TEST_CASE("latency accounting") {
  const auto account = latency_account(0.1, 0.3, 0.5);
  CHECK(account.mixture_per_token_s == doctest::Approx(0.2));
  CHECK(account.speedup_vs_remote == doctest::Approx(1.5));

  CHECK(latency_account(0.1, 0.3, 1.0).speedup_vs_remote == doctest::Approx(1.0));
  CHECK_THROWS_AS(latency_account(0.0, 0.3, 0.5), std::invalid_argument);
}

TEST_CASE("curve CSV has a header and one row per threshold") {
  TradeoffCurve curve;
  curve.points = {{0.0, 0.5, 0.01}, {1.0, 1.0, 0.03}};
  const std::string csv = curve_to_csv(curve);
  CHECK(csv.rfind("routing_rate,accuracy,mean_latency_s\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

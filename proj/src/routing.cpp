#include "confroute/routing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

namespace confroute::routing {

std::vector<double> quantile_thresholds(std::span<const double> scores, int steps) {
  if (scores.empty()) {
    throw std::invalid_argument("quantile_thresholds: empty scores");
  }
  if (steps < 1) {
    throw std::invalid_argument("quantile_thresholds: steps must be >= 1");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  std::vector<double> thresholds;
  thresholds.reserve(static_cast<std::size_t>(steps) + 1);
  for (int p = 0; p < steps; ++p) {
    const auto rank = static_cast<std::size_t>(
        std::floor(static_cast<double>(p) * static_cast<double>(n) /
                   static_cast<double>(steps)));
    thresholds.push_back(sorted[std::min(rank, n - 1)]);
  }
  // Sentinel just above the maximum so the last policy routes everything
  // under the strict less-than rule.
  thresholds.push_back(
      std::nextafter(sorted.back(), std::numeric_limits<double>::infinity()));
  return thresholds;
}

std::vector<RoutingPolicy> quantile_policies(std::span<const double> scores,
                                             int steps) {
  const auto thresholds = quantile_thresholds(scores, steps);
  std::vector<RoutingPolicy> policies;
  policies.reserve(thresholds.size());
  for (int p = 0; p < static_cast<int>(thresholds.size()); ++p) {
    policies.push_back({thresholds[p], p});
  }
  return policies;
}

Decision route(const confidence::ConfidenceScore& score, const RoutingPolicy& policy) {
  return score.value < policy.threshold ? Decision::remote : Decision::local;
}

namespace {

struct AlignedRow {
  const PredictionRecord* local;
  const PredictionRecord* remote;
  double score;
  const QueryRecord* truth;
};

double per_token_latency(const PredictionRecord& prediction) {
  return prediction.latency_s / static_cast<double>(prediction.token_count);
}

std::vector<AlignedRow> align(std::span<const PredictionRecord> local,
                              std::span<const PredictionRecord> remote,
                              std::span<const confidence::ConfidenceScore> scores,
                              const Dataset& truths) {
  if (scores.size() != truths.records.size()) {
    throw AlignmentError("tradeoff_curve: scores/truths length mismatch");
  }
  std::unordered_map<std::string, const PredictionRecord*> local_by_id;
  std::unordered_map<std::string, const PredictionRecord*> remote_by_id;
  for (const auto& p : local) local_by_id[p.query_id] = &p;
  for (const auto& p : remote) remote_by_id[p.query_id] = &p;

  std::vector<AlignedRow> rows;
  rows.reserve(truths.records.size());
  for (std::size_t i = 0; i < truths.records.size(); ++i) {
    const auto& record = truths.records[i];
    const auto local_it = local_by_id.find(record.id);
    const auto remote_it = remote_by_id.find(record.id);
    if (local_it == local_by_id.end() || remote_it == remote_by_id.end()) {
      throw AlignmentError("tradeoff_curve: no prediction for query '" + record.id + "'");
    }
    rows.push_back({local_it->second, remote_it->second, scores[i].value, &record});
  }
  return rows;
}

}  // namespace

TradeoffCurve tradeoff_curve(std::span<const PredictionRecord> local,
                             std::span<const PredictionRecord> remote,
                             std::span<const confidence::ConfidenceScore> scores,
                             const Dataset& truths, std::span<const double> thresholds) {
  const auto rows = align(local, remote, scores, truths);
  if (rows.empty()) {
    throw std::invalid_argument("tradeoff_curve: empty evaluation set");
  }
  const auto total = static_cast<double>(rows.size());

  TradeoffCurve curve;
  curve.points.reserve(thresholds.size());
  for (double threshold : thresholds) {
    const RoutingPolicy policy{threshold, std::nullopt};
    std::size_t routed = 0;
    std::size_t correct = 0;
    double latency_sum = 0.0;
    for (const auto& row : rows) {
      const bool remote_used =
          route({row.score, confidence::Method::self_ref}, policy) == Decision::remote;
      const PredictionRecord& chosen = remote_used ? *row.remote : *row.local;
      routed += remote_used ? 1 : 0;
      correct += is_correct(chosen, *row.truth) ? 1 : 0;
      latency_sum += per_token_latency(chosen);
    }
    curve.points.push_back({static_cast<double>(routed) / total,
                            static_cast<double>(correct) / total, latency_sum / total});
  }
  std::stable_sort(curve.points.begin(), curve.points.end(),
                   [](const TradeoffPoint& a, const TradeoffPoint& b) {
                     return a.routing_rate < b.routing_rate;
                   });
  return curve;
}

std::vector<BaselinePoint> random_baseline(double acc_local, double acc_remote,
                                           std::span<const double> rates) {
  if (!(acc_local >= 0.0 && acc_local <= 1.0) ||
      !(acc_remote >= 0.0 && acc_remote <= 1.0)) {
    throw std::invalid_argument("random_baseline: accuracies must lie in [0,1]");
  }
  std::vector<BaselinePoint> points;
  points.reserve(rates.size());
  for (double r : rates) {
    points.push_back({r, (1.0 - r) * acc_local + r * acc_remote});
  }
  return points;
}

std::optional<double> parity_routing_rate(const TradeoffCurve& curve,
                                          double target_accuracy) {
  if (curve.points.empty()) {
    throw std::invalid_argument("parity_routing_rate: empty curve");
  }
  std::optional<double> best;
  for (const auto& point : curve.points) {
    if (point.accuracy >= target_accuracy) {
      if (!best.has_value() || point.routing_rate < *best) {
        best = point.routing_rate;
      }
    }
  }
  return best;
}

LatencyAccount latency_account(double local_per_token_s, double remote_per_token_s,
                               double routed_fraction) {
  if (!(local_per_token_s > 0.0) || !(remote_per_token_s > 0.0)) {
    throw std::invalid_argument("latency_account: latencies must be positive");
  }
  if (!(routed_fraction >= 0.0 && routed_fraction <= 1.0)) {
    throw std::invalid_argument("latency_account: fraction must lie in [0,1]");
  }
  LatencyAccount account;
  account.mixture_per_token_s = (1.0 - routed_fraction) * local_per_token_s +
                                routed_fraction * remote_per_token_s;
  account.speedup_vs_remote = remote_per_token_s / account.mixture_per_token_s;
  return account;
}

std::string curve_to_csv(const TradeoffCurve& curve) {
  std::string csv = "routing_rate,accuracy,mean_latency_s\n";
  char row[128];
  for (const auto& point : curve.points) {
    std::snprintf(row, sizeof(row), "%.17g,%.17g,%.17g\n", point.routing_rate,
                  point.accuracy, point.mean_latency_s);
    csv += row;
  }
  return csv;
}

void save_curve_csv(const TradeoffCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << curve_to_csv(curve);
}

}  // namespace confroute::routing

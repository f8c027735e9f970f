#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "confroute/confidence.hpp"
#include "confroute/core.hpp"

namespace confroute::routing {

enum class Decision { local, remote };

struct RoutingPolicy {
  double threshold{0.0};
  std::optional<int> quantile_step;  // p in 0..steps when quantile-derived
};

struct TradeoffPoint {
  double routing_rate{0.0};
  double accuracy{0.0};
  double mean_latency_s{0.0};  // mean per-token latency of the realized mixture
};

struct TradeoffCurve {
  std::vector<TradeoffPoint> points;  // routing_rate nondecreasing
};

struct AlignmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thresholds at quantile proportions p/steps for p = 0..steps. For p <
/// steps the threshold is the sorted score at rank floor(p*N/steps), so a
/// strict less-than rule routes exactly floor(p*N/steps) items on tie-free
/// scores; the final threshold sits just above the maximum and routes
/// everything.
std::vector<double> quantile_thresholds(std::span<const double> scores, int steps = 20);

/// Same thresholds wrapped as policies carrying their quantile step.
std::vector<RoutingPolicy> quantile_policies(std::span<const double> scores,
                                             int steps = 20);

/// Route to the remote model exactly when confidence < threshold.
Decision route(const confidence::ConfidenceScore& score, const RoutingPolicy& policy);

/// One point per threshold: routed fraction, system accuracy with remote
/// answers substituted where routed, and the mean per-token latency of the
/// realized local/remote mixture. Records align by query_id against truths.
TradeoffCurve tradeoff_curve(std::span<const PredictionRecord> local,
                             std::span<const PredictionRecord> remote,
                             std::span<const confidence::ConfidenceScore> scores,
                             const Dataset& truths, std::span<const double> thresholds);

struct BaselinePoint {
  double rate{0.0};
  double accuracy{0.0};
};

/// Expected accuracy of routing a fraction r uniformly at random:
/// (1-r)*acc_local + r*acc_remote.
std::vector<BaselinePoint> random_baseline(double acc_local, double acc_remote,
                                           std::span<const double> rates);

/// Smallest routing rate whose accuracy reaches the target, if any.
std::optional<double> parity_routing_rate(const TradeoffCurve& curve,
                                          double target_accuracy);

struct LatencyAccount {
  double mixture_per_token_s{0.0};
  double speedup_vs_remote{1.0};
};

LatencyAccount latency_account(double local_per_token_s, double remote_per_token_s,
                               double routed_fraction);

/// CSV rows "routing_rate,accuracy,mean_latency_s", one per threshold.
std::string curve_to_csv(const TradeoffCurve& curve);
void save_curve_csv(const TradeoffCurve& curve, const std::string& path);

}  // namespace confroute::routing

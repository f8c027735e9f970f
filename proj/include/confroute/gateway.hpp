#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace confroute::gateway {

struct BackendConfig {
  std::string name;
  std::string base_url;
  int timeout_ms{5000};
  int max_retries{0};
};

enum class DegradedMode { fallback_to_local, error };

DegradedMode degraded_mode_from_string(const std::string& name);
std::string to_string(DegradedMode mode);

/// Serving-time policy. Any threshold above 1 acts as the route-everything
/// sentinel under the strict less-than rule.
struct GatewayConfig {
  double threshold{0.0};
  BackendConfig local;
  BackendConfig remote;
  std::string listen_address{"127.0.0.1:8080"};
  DegradedMode degraded_mode{DegradedMode::fallback_to_local};

  static GatewayConfig from_json(const std::string& text);
  static GatewayConfig from_file(const std::string& path);
  /// CONFROUTE_LISTEN_ADDRESS and CONFROUTE_THRESHOLD override the file.
  void apply_env_overrides();
  void validate() const;
};

struct QueryRequest {
  std::string id;
  std::string prompt;
  std::string choices_json;  // raw JSON for passthrough, "null" when absent
};

struct RouteResponse {
  std::string query_id;
  std::string answer;
  std::string model_used;  // "local" | "remote"
  double confidence{0.0};
  double local_latency_s{0.0};
  std::optional<double> remote_latency_s;  // present iff remote was attempted
  bool degraded{false};
};

std::string to_json(const RouteResponse& response);

struct UpstreamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BindError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Request-latency histogram with fixed millisecond bucket upper bounds.
struct LatencyHistogram {
  static constexpr std::array<double, 10> kBucketUpperMs = {
      1, 2, 5, 10, 25, 50, 100, 250, 500, 1000};
  std::array<std::uint64_t, kBucketUpperMs.size() + 1> counts{};  // last = overflow

  void observe_ms(double ms);
};

struct MetricsSnapshot {
  std::uint64_t requests_total{0};
  std::uint64_t routed_total{0};
  std::uint64_t degraded_total{0};
  LatencyHistogram local_latency;
  LatencyHistogram remote_latency;
  LatencyHistogram request_latency;
};

std::string to_json(const MetricsSnapshot& snapshot);

/// Confidence-gated router between a mandatory local backend and a remote
/// one. handle_query is safe to call concurrently; start() additionally
/// exposes it over HTTP.
class Gateway {
 public:
  explicit Gateway(GatewayConfig config);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Calls the local backend, extracts the confidence score from its
  /// (p_un, p_cn), and routes to the remote backend when the score falls
  /// below the threshold. Throws UpstreamError when the local backend (or,
  /// in error mode, the remote backend) fails.
  RouteResponse handle_query(const QueryRequest& request);

  MetricsSnapshot metrics_snapshot() const;

  /// Atomic policy swap; in-flight requests finish under the old config.
  void set_threshold(double threshold);
  GatewayConfig config() const;

  /// Binds the configured listen address (port 0 picks one) and serves
  /// POST /v1/query, GET /healthz, GET /metrics. Returns the bound port.
  int start();
  void stop();
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace confroute::gateway

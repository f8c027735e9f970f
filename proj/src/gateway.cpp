#include "confroute/gateway.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "confroute/confidence.hpp"
#include "confroute/core.hpp"
#include "confroute/routing.hpp"

namespace confroute::gateway {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

DegradedMode degraded_mode_from_string(const std::string& name) {
  if (name == "fallback-to-local") return DegradedMode::fallback_to_local;
  if (name == "error") return DegradedMode::error;
  throw std::invalid_argument("unknown degraded_mode: " + name);
}

std::string to_string(DegradedMode mode) {
  return mode == DegradedMode::fallback_to_local ? "fallback-to-local" : "error";
}

namespace {

BackendConfig backend_from_json(const json& obj) {
  BackendConfig backend;
  backend.name = obj.at("name").get<std::string>();
  backend.base_url = obj.at("base_url").get<std::string>();
  backend.timeout_ms = obj.value("timeout_ms", 5000);
  backend.max_retries = obj.value("max_retries", 0);
  return backend;
}

}  // namespace

GatewayConfig GatewayConfig::from_json(const std::string& text) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& err) {
    throw SchemaError(0, std::string("bad gateway config: ") + err.what());
  }
  GatewayConfig config;
  try {
    config.threshold = obj.at("threshold").get<double>();
    config.local = backend_from_json(obj.at("local"));
    config.remote = backend_from_json(obj.at("remote"));
    config.listen_address = obj.value("listen_address", std::string("127.0.0.1:8080"));
    if (obj.contains("degraded_mode")) {
      config.degraded_mode =
          degraded_mode_from_string(obj.at("degraded_mode").get<std::string>());
    }
  } catch (const json::exception& err) {
    throw SchemaError(0, std::string("bad gateway config: ") + err.what());
  }
  config.validate();
  return config;
}

GatewayConfig GatewayConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

void GatewayConfig::apply_env_overrides() {
  if (const char* listen = std::getenv("CONFROUTE_LISTEN_ADDRESS")) {
    listen_address = listen;
  }
  if (const char* threshold_env = std::getenv("CONFROUTE_THRESHOLD")) {
    threshold = std::stod(threshold_env);
  }
  validate();
}

void GatewayConfig::validate() const {
  if (!(threshold >= 0.0)) {
    throw std::invalid_argument("gateway config: threshold must be nonnegative");
  }
  if (local.base_url == remote.base_url) {
    throw std::invalid_argument("gateway config: local and remote URLs must differ");
  }
  for (const BackendConfig* backend : {&local, &remote}) {
    if (backend->base_url.empty()) {
      throw std::invalid_argument("gateway config: backend base_url is empty");
    }
    if (backend->timeout_ms <= 0) {
      throw std::invalid_argument("gateway config: timeout_ms must be positive");
    }
    if (backend->max_retries < 0) {
      throw std::invalid_argument("gateway config: max_retries must be nonnegative");
    }
  }
}

void LatencyHistogram::observe_ms(double ms) {
  for (std::size_t i = 0; i < kBucketUpperMs.size(); ++i) {
    if (ms <= kBucketUpperMs[i]) {
      ++counts[i];
      return;
    }
  }
  ++counts.back();
}

namespace {

json histogram_to_json(const LatencyHistogram& histogram) {
  json buckets = json::array();
  for (std::size_t i = 0; i < LatencyHistogram::kBucketUpperMs.size(); ++i) {
    buckets.push_back({{"le_ms", LatencyHistogram::kBucketUpperMs[i]},
                       {"count", histogram.counts[i]}});
  }
  buckets.push_back({{"le_ms", "inf"}, {"count", histogram.counts.back()}});
  return buckets;
}

}  // namespace

std::string to_json(const MetricsSnapshot& snapshot) {
  ordered_json obj;
  obj["requests_total"] = snapshot.requests_total;
  obj["routed_total"] = snapshot.routed_total;
  obj["degraded_total"] = snapshot.degraded_total;
  obj["latency"] = {{"local", histogram_to_json(snapshot.local_latency)},
                    {"remote", histogram_to_json(snapshot.remote_latency)},
                    {"request", histogram_to_json(snapshot.request_latency)}};
  return obj.dump();
}

std::string to_json(const RouteResponse& response) {
  ordered_json obj;
  obj["query_id"] = response.query_id;
  obj["answer"] = response.answer;
  obj["model_used"] = response.model_used;
  obj["confidence"] = response.confidence;
  obj["local_latency_s"] = response.local_latency_s;
  if (response.remote_latency_s.has_value()) {
    obj["remote_latency_s"] = *response.remote_latency_s;
  }
  obj["degraded"] = response.degraded;
  return obj.dump();
}

namespace {

struct BackendReply {
  std::string answer;
  std::vector<double> token_probs;
  double p_un{0.0};
  double p_cn{0.0};
  double latency_s{0.0};
};

struct CallOutcome {
  std::optional<BackendReply> reply;
  std::string error;
  double elapsed_s{0.0};
};

class AtomicHistogram {
 public:
  void observe_ms(double ms) {
    for (std::size_t i = 0; i < LatencyHistogram::kBucketUpperMs.size(); ++i) {
      if (ms <= LatencyHistogram::kBucketUpperMs[i]) {
        counts_[i].fetch_add(1, std::memory_order_relaxed);
        return;
      }
    }
    counts_.back().fetch_add(1, std::memory_order_relaxed);
  }

  LatencyHistogram snapshot() const {
    LatencyHistogram histogram;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      histogram.counts[i] = counts_[i].load(std::memory_order_relaxed);
    }
    return histogram;
  }

 private:
  std::array<std::atomic<std::uint64_t>, LatencyHistogram::kBucketUpperMs.size() + 1>
      counts_{};
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

// One backend call with retries on connection errors only. A response with
// any HTTP status is final; retrying a non-idempotent model backend on a
// valid error response is never safe.
CallOutcome call_backend(const BackendConfig& backend, const std::string& payload) {
  const auto start = std::chrono::steady_clock::now();
  CallOutcome outcome;

  httplib::Client client(backend.base_url);
  const time_t seconds = backend.timeout_ms / 1000;
  const time_t microseconds = (backend.timeout_ms % 1000) * 1000;
  client.set_connection_timeout(seconds, microseconds);
  client.set_read_timeout(seconds, microseconds);
  client.set_write_timeout(seconds, microseconds);

  httplib::Result result;
  for (int attempt = 0; attempt <= backend.max_retries; ++attempt) {
    result = client.Post("/v1/generate", payload, "application/json");
    if (result) break;  // got an HTTP response; never retry those
  }
  outcome.elapsed_s = seconds_since(start);
  if (!result) {
    outcome.error = backend.name + ": " + httplib::to_string(result.error());
    return outcome;
  }
  if (result->status != 200) {
    outcome.error = backend.name + ": HTTP " + std::to_string(result->status);
    return outcome;
  }
  try {
    const json obj = json::parse(result->body);
    BackendReply reply;
    reply.answer = obj.at("answer").get<std::string>();
    if (obj.contains("token_probs")) {
      reply.token_probs = obj.at("token_probs").get<std::vector<double>>();
    }
    reply.p_un = obj.at("p_un").get<double>();
    reply.p_cn = obj.at("p_cn").get<double>();
    reply.latency_s = obj.value("latency_s", 0.0);
    outcome.reply = std::move(reply);
  } catch (const json::exception& err) {
    outcome.error = backend.name + ": malformed reply: " + err.what();
  }
  return outcome;
}

}  // namespace

struct Gateway::Impl {
  mutable std::mutex config_mutex;
  std::shared_ptr<const GatewayConfig> config;

  std::atomic<std::uint64_t> requests_total{0};
  std::atomic<std::uint64_t> routed_total{0};
  std::atomic<std::uint64_t> degraded_total{0};
  AtomicHistogram local_latency;
  AtomicHistogram remote_latency;
  AtomicHistogram request_latency;

  httplib::Server server;
  std::thread worker;
  std::string host;
  int port{0};

  std::shared_ptr<const GatewayConfig> snapshot() const {
    std::lock_guard lock(config_mutex);
    return config;
  }
};

Gateway::Gateway(GatewayConfig config) : impl_(std::make_unique<Impl>()) {
  config.validate();
  impl_->config = std::make_shared<const GatewayConfig>(std::move(config));
}

Gateway::~Gateway() { stop(); }

void Gateway::set_threshold(double threshold) {
  if (!(threshold >= 0.0)) {
    throw std::invalid_argument("set_threshold: threshold must be nonnegative");
  }
  std::lock_guard lock(impl_->config_mutex);
  auto updated = std::make_shared<GatewayConfig>(*impl_->config);
  updated->threshold = threshold;
  impl_->config = std::move(updated);
}

GatewayConfig Gateway::config() const { return *impl_->snapshot(); }

RouteResponse Gateway::handle_query(const QueryRequest& request) {
  const auto started = std::chrono::steady_clock::now();
  const auto config = impl_->snapshot();
  impl_->requests_total.fetch_add(1);

  ordered_json payload;
  payload["prompt"] = request.prompt;
  payload["id"] = request.id;
  payload["choices"] = request.choices_json.empty()
                           ? json(nullptr)
                           : json::parse(request.choices_json);
  const std::string body = payload.dump();

  const CallOutcome local = call_backend(config->local, body);
  impl_->local_latency.observe_ms(local.elapsed_s * 1e3);
  if (!local.reply.has_value()) {
    throw UpstreamError("local backend failed: " + local.error);
  }

  RouteResponse response;
  response.query_id = request.id;
  response.local_latency_s = local.elapsed_s;
  try {
    response.confidence =
        confidence::self_ref_score(local.reply->p_un, local.reply->p_cn).value;
  } catch (const confidence::ZeroSumError&) {
    throw UpstreamError("local backend failed: " + config->local.name +
                        ": zero probability mass on both confidence tokens");
  }

  // The serving decision and the offline evaluator share one rule.
  const routing::RoutingPolicy policy{config->threshold, std::nullopt};
  const bool go_remote =
      routing::route({response.confidence, confidence::Method::self_ref}, policy) ==
      routing::Decision::remote;
  if (!go_remote) {
    response.answer = local.reply->answer;
    response.model_used = "local";
    impl_->request_latency.observe_ms(seconds_since(started) * 1e3);
    return response;
  }

  const CallOutcome remote = call_backend(config->remote, body);
  impl_->remote_latency.observe_ms(remote.elapsed_s * 1e3);
  response.remote_latency_s = remote.elapsed_s;
  if (remote.reply.has_value()) {
    impl_->routed_total.fetch_add(1);
    response.answer = remote.reply->answer;
    response.model_used = "remote";
    impl_->request_latency.observe_ms(seconds_since(started) * 1e3);
    return response;
  }
  if (config->degraded_mode == DegradedMode::error) {
    throw UpstreamError("remote backend failed: " + remote.error);
  }
  impl_->degraded_total.fetch_add(1);
  response.answer = local.reply->answer;
  response.model_used = "local";
  response.degraded = true;
  impl_->request_latency.observe_ms(seconds_since(started) * 1e3);
  return response;
}

MetricsSnapshot Gateway::metrics_snapshot() const {
  MetricsSnapshot snapshot;
  snapshot.requests_total = impl_->requests_total.load();
  snapshot.routed_total = impl_->routed_total.load();
  snapshot.degraded_total = impl_->degraded_total.load();
  snapshot.local_latency = impl_->local_latency.snapshot();
  snapshot.remote_latency = impl_->remote_latency.snapshot();
  snapshot.request_latency = impl_->request_latency.snapshot();
  return snapshot;
}

int Gateway::start() {
  const auto config = impl_->snapshot();
  const auto colon = config->listen_address.rfind(':');
  if (colon == std::string::npos) {
    throw std::invalid_argument("listen_address must be host:port");
  }
  impl_->host = config->listen_address.substr(0, colon);
  const int requested_port = std::stoi(config->listen_address.substr(colon + 1));

  impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });
  impl_->server.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(to_json(metrics_snapshot()), "application/json");
  });
  impl_->server.Post("/v1/query", [this](const httplib::Request& req,
                                         httplib::Response& res) {
    QueryRequest request;
    try {
      const json obj = json::parse(req.body);
      request.id = obj.at("id").get<std::string>();
      request.prompt = obj.at("prompt").get<std::string>();
      if (obj.contains("choices") && !obj.at("choices").is_null()) {
        request.choices_json = obj.at("choices").dump();
      }
    } catch (const json::exception& err) {
      res.status = 400;
      res.set_content(json{{"error", std::string("bad request: ") + err.what()}}.dump(),
                      "application/json");
      return;
    }
    try {
      res.set_content(to_json(handle_query(request)), "application/json");
    } catch (const UpstreamError& err) {
      res.status = 502;
      res.set_content(json{{"error", err.what()}}.dump(), "application/json");
    }
  });

  if (requested_port == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->host);
    if (impl_->port < 0) {
      throw BindError("gateway: cannot bind to any port on " + impl_->host);
    }
  } else {
    if (!impl_->server.bind_to_port(impl_->host, requested_port)) {
      throw BindError("gateway: cannot bind " + config->listen_address);
    }
    impl_->port = requested_port;
  }
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void Gateway::stop() {
  if (impl_->server.is_running()) {
    impl_->server.stop();
  }
  if (impl_->worker.joinable()) {
    impl_->worker.join();
  }
}

std::string Gateway::base_url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

}  // namespace confroute::gateway

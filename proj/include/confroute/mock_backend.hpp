#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace confroute::mock_backend {

enum class FailureKind { connection_reset, http_500 };

FailureKind failure_from_string(const std::string& name);

struct ScriptResponse {
  std::string answer;
  std::vector<double> token_probs;
  double p_un{0.0};
  double p_cn{0.0};
  double latency_s{0.0};
};

/// Canned backend behavior. Sequence mode (default) serves responses[i] to
/// the i-th request, repeating the last entry once the list is exhausted;
/// prompt mode looks responses up by the exact prompt string. failure_plan
/// entries fire once, keyed by request index.
struct Script {
  std::vector<ScriptResponse> responses;
  std::map<std::string, ScriptResponse> responses_by_prompt;
  bool key_by_prompt{false};
  std::map<std::uint64_t, FailureKind> failure_plan;
  int artificial_delay_ms{0};

  static Script from_json(const std::string& text);
  static Script from_file(const std::string& path);
};

struct BindError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A running scripted backend serving the /v1/generate wire contract.
/// Stops cleanly on destruction.
class MockServer {
 public:
  MockServer(Script script, const std::string& host, int port);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  int port() const;
  std::string base_url() const;
  std::uint64_t request_count() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// listen_address is "host:port"; port 0 picks a free port.
std::unique_ptr<MockServer> serve_script(Script script,
                                         const std::string& listen_address);

}  // namespace confroute::mock_backend

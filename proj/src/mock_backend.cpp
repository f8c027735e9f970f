#include "confroute/mock_backend.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "confroute/core.hpp"

namespace confroute::mock_backend {

using nlohmann::json;

FailureKind failure_from_string(const std::string& name) {
  if (name == "connection_reset") return FailureKind::connection_reset;
  if (name == "http_500") return FailureKind::http_500;
  throw std::invalid_argument("unknown failure kind: " + name);
}

namespace {

ScriptResponse response_from_json(const json& obj) {
  ScriptResponse response;
  response.answer = obj.at("answer").get<std::string>();
  if (obj.contains("token_probs")) {
    response.token_probs = obj.at("token_probs").get<std::vector<double>>();
  }
  response.p_un = obj.value("p_un", 0.0);
  response.p_cn = obj.value("p_cn", 0.0);
  response.latency_s = obj.value("latency_s", 0.0);
  return response;
}

json response_to_json(const ScriptResponse& response) {
  return json{{"answer", response.answer},
              {"token_probs", response.token_probs},
              {"p_un", response.p_un},
              {"p_cn", response.p_cn},
              {"latency_s", response.latency_s}};
}

}  // namespace

Script Script::from_json(const std::string& text) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& err) {
    throw SchemaError(0, std::string("bad script: ") + err.what());
  }
  Script script;
  try {
    if (obj.contains("key_by")) {
      const auto key_by = obj.at("key_by").get<std::string>();
      if (key_by == "prompt") {
        script.key_by_prompt = true;
      } else if (key_by != "sequence") {
        throw SchemaError(0, "bad script: key_by must be 'sequence' or 'prompt'");
      }
    }
    if (obj.contains("responses")) {
      for (const auto& entry : obj.at("responses")) {
        script.responses.push_back(response_from_json(entry));
      }
    }
    if (obj.contains("responses_by_prompt")) {
      for (const auto& [prompt, entry] : obj.at("responses_by_prompt").items()) {
        script.responses_by_prompt.emplace(prompt, response_from_json(entry));
      }
    }
    if (obj.contains("failure_plan")) {
      for (const auto& entry : obj.at("failure_plan")) {
        script.failure_plan.emplace(
            entry.at("index").get<std::uint64_t>(),
            failure_from_string(entry.at("kind").get<std::string>()));
      }
    }
    script.artificial_delay_ms = obj.value("artificial_delay_ms", 0);
  } catch (const json::exception& err) {
    throw SchemaError(0, std::string("bad script: ") + err.what());
  }
  if (script.artificial_delay_ms < 0) {
    throw SchemaError(0, "bad script: artificial_delay_ms must be nonnegative");
  }
  if (script.key_by_prompt ? script.responses_by_prompt.empty()
                           : script.responses.empty()) {
    throw SchemaError(0, "bad script: no responses for the selected keying mode");
  }
  return script;
}

Script Script::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

struct MockServer::Impl {
  Script script;
  httplib::Server server;
  std::thread worker;
  std::atomic<std::uint64_t> cursor{0};
  std::string host;
  int port{0};
};

MockServer::MockServer(Script script, const std::string& host, int port)
    : impl_(std::make_unique<Impl>()) {
  impl_->script = std::move(script);
  impl_->host = host;

  impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });
  impl_->server.Post("/v1/generate", [this](const httplib::Request& req,
                                            httplib::Response& res) {
    Impl& impl = *impl_;
    const std::uint64_t index = impl.cursor.fetch_add(1);
    if (impl.script.artificial_delay_ms > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(impl.script.artificial_delay_ms));
    }
    if (const auto failure = impl.script.failure_plan.find(index);
        failure != impl.script.failure_plan.end()) {
      if (failure->second == FailureKind::http_500) {
        res.status = 500;
        res.set_content(R"({"error":"scripted failure"})", "application/json");
        return;
      }
      // connection_reset: advertise a body and then abort mid-write so the
      // client observes a broken connection rather than an HTTP error.
      res.set_content_provider(
          64, "application/json",
          [](std::size_t, std::size_t, httplib::DataSink&) { return false; });
      return;
    }

    const ScriptResponse* chosen = nullptr;
    if (impl.script.key_by_prompt) {
      std::string prompt;
      try {
        prompt = json::parse(req.body).at("prompt").get<std::string>();
      } catch (const json::exception&) {
        res.status = 400;
        res.set_content(R"({"error":"bad request"})", "application/json");
        return;
      }
      const auto it = impl.script.responses_by_prompt.find(prompt);
      if (it == impl.script.responses_by_prompt.end()) {
        res.status = 404;
        res.set_content(R"({"error":"no scripted response for prompt"})",
                        "application/json");
        return;
      }
      chosen = &it->second;
    } else {
      const std::size_t slot =
          std::min<std::size_t>(index, impl.script.responses.size() - 1);
      chosen = &impl.script.responses[slot];
    }
    res.set_content(response_to_json(*chosen).dump(), "application/json");
  });

  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
    if (impl_->port < 0) {
      throw BindError("mock backend: cannot bind to any port on " + host);
    }
  } else {
    if (!impl_->server.bind_to_port(host, port)) {
      throw BindError("mock backend: cannot bind " + host + ":" +
                      std::to_string(port));
    }
    impl_->port = port;
  }
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

MockServer::~MockServer() { stop(); }

int MockServer::port() const { return impl_->port; }

std::string MockServer::base_url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

std::uint64_t MockServer::request_count() const { return impl_->cursor.load(); }

void MockServer::stop() {
  if (impl_->server.is_running()) {
    impl_->server.stop();
  }
  if (impl_->worker.joinable()) {
    impl_->worker.join();
  }
}

std::unique_ptr<MockServer> serve_script(Script script,
                                         const std::string& listen_address) {
  const auto colon = listen_address.rfind(':');
  if (colon == std::string::npos) {
    throw std::invalid_argument("listen_address must be host:port");
  }
  const std::string host = listen_address.substr(0, colon);
  const int port = std::stoi(listen_address.substr(colon + 1));
  return std::make_unique<MockServer>(std::move(script), host, port);
}

}  // namespace confroute::mock_backend

#pragma once

#include "ebod/remote.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <string>
#include <thread>

namespace ebod::test {

/// In-process wire-protocol server backed by the synthetic implementations.
/// Features use dim 4 so payloads stay small. `mangle` rewrites each response
/// body and `status` overrides the HTTP status, for fault injection.
class FixtureServer {
 public:
  using Mangle = std::function<void(const std::string& path, nlohmann::json& body)>;

  FixtureServer() : features_(16, 4, 0) {
    route("/v1/features", [this](const nlohmann::json& req) {
      return wire::features_response(features_.extract(wire::image_from_b64(req, "image_png_b64")));
    });
    route("/v1/match", [](const nlohmann::json& req) {
      const auto a = wire::image_from_b64(req, "image_a_png_b64");
      const auto b = wire::image_from_b64(req, "image_b_png_b64");
      return wire::match_response(NccGridMatcher().match(a, b));
    });
    route("/v1/detect", [](const nlohmann::json& req) {
      std::vector<BoxPrompt> prompts;
      for (const auto& p : wire::require(req, "prompts")) {
        prompts.push_back({wire::require_box(p, "prompts[]"), wire::require_bool(p, "polarity"), "", 0});
      }
      const auto img = wire::image_from_b64(req, "image_png_b64");
      return wire::detect_response(SyntheticPromptDetector().detect(img, wire::require_string(req, "text"), prompts));
    });
    server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json body = health_body();
      respond("/v1/health", body, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~FixtureServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  FixtureServer(const FixtureServer&) = delete;
  FixtureServer& operator=(const FixtureServer&) = delete;

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  Endpoint endpoint(std::chrono::milliseconds timeout = std::chrono::milliseconds(5000)) const {
    return {url(), timeout};
  }

  void set_mangle(Mangle m) {
    std::lock_guard lock(mu_);
    mangle_ = std::move(m);
  }
  void set_status(int s) { status_ = s; }
  void set_delay(std::chrono::milliseconds d) { delay_ = d; }
  int requests() const { return requests_; }

  static nlohmann::json health_body() {
    return {{"status", "ok"}, {"models", {{"features", "synthetic"}, {"matcher", "ncc"}, {"detector", "color-blob"}}}};
  }

 private:
  void route(const std::string& path, std::function<nlohmann::json(const nlohmann::json&)> handler) {
    server_.Post(path, [this, path, handler](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = handler(nlohmann::json::parse(req.body));
      } catch (const std::exception& e) {
        ++requests_;
        res.status = 400;
        res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
        return;
      }
      respond(path, body, res);
    });
  }

  void respond(const std::string& path, nlohmann::json& body, httplib::Response& res) {
    ++requests_;
    std::this_thread::sleep_for(delay_.load());
    {
      std::lock_guard lock(mu_);
      if (mangle_) mangle_(path, body);
    }
    res.status = status_;
    res.set_content(body.is_string() ? body.get<std::string>() : body.dump(), "application/json");
  }

  httplib::Server server_;
  SyntheticFeatureExtractor features_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mu_;
  Mangle mangle_;
  std::atomic<int> status_{200};
  std::atomic<std::chrono::milliseconds> delay_{std::chrono::milliseconds(0)};
  std::atomic<int> requests_{0};
};

}  // namespace ebod::test

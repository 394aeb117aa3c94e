#pragma once

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include "ebod/backends.hpp"
#include "ebod/error.hpp"
#include "ebod/image.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ebod {

// Wire protocol v1: JSON over HTTP, images as base64 PNG, coordinates in
// pixels. Unknown fields are ignored; missing required ones are a
// SchemaViolation naming the field.
namespace wire {

using nlohmann::json;

inline const json& require(const json& obj, const char* field, const std::string& path = {}) {
  const std::string name = path.empty() ? field : path + "." + field;
  if (!obj.is_object() || !obj.contains(field)) fail(ErrorCode::SchemaViolation, name);
  return obj.at(field);
}

inline double require_number(const json& obj, const char* field, const std::string& path = {}) {
  const json& v = require(obj, field, path);
  if (!v.is_number()) fail(ErrorCode::SchemaViolation, (path.empty() ? "" : path + ".") + field);
  return v.get<double>();
}

inline int require_int(const json& obj, const char* field) {
  const json& v = require(obj, field);
  if (!v.is_number_integer()) fail(ErrorCode::SchemaViolation, field);
  return v.get<int>();
}

inline bool require_bool(const json& obj, const char* field) {
  const json& v = require(obj, field);
  if (!v.is_boolean()) fail(ErrorCode::SchemaViolation, field);
  return v.get<bool>();
}

inline std::string require_string(const json& obj, const char* field) {
  const json& v = require(obj, field);
  if (!v.is_string()) fail(ErrorCode::SchemaViolation, field);
  return v.get<std::string>();
}

inline BBox require_box(const json& obj, const std::string& path) {
  const json& b = require(obj, "box", path);
  if (!b.is_array() || b.size() != 4) fail(ErrorCode::SchemaViolation, path + ".box");
  for (const auto& v : b)
    if (!v.is_number()) fail(ErrorCode::SchemaViolation, path + ".box");
  BBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  if (!box.valid()) fail(ErrorCode::SchemaViolation, path + ".box");
  return box;
}

inline json box_json(const BBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

inline std::string image_b64(const Image& img) { return base64_encode(encode_png(img)); }

inline Image image_from_b64(const json& obj, const char* field) {
  const auto bytes = base64_decode(require_string(obj, field));
  return decode_png(bytes);
}

// requests ----------------------------------------------------------------

inline json features_request(const Image& img) { return {{"image_png_b64", image_b64(img)}}; }

inline json match_request(const Image& a, const Image& b) {
  return {{"image_a_png_b64", image_b64(a)}, {"image_b_png_b64", image_b64(b)}};
}

inline json detect_request(const Image& img, const std::string& text, std::span<const BoxPrompt> prompts) {
  json ps = json::array();
  for (const auto& p : prompts) ps.push_back({{"box", box_json(p.box)}, {"polarity", p.polarity}});
  return {{"image_png_b64", image_b64(img)}, {"text", text}, {"prompts", ps}};
}

// responses ---------------------------------------------------------------

inline json features_response(const FeatureMap& m) {
  return {{"dim", m.dim}, {"stride", m.stride}, {"grid_w", m.grid_w}, {"grid_h", m.grid_h}, {"values", m.values}};
}

inline json match_response(std::span<const Correspondence> corrs) {
  json ms = json::array();
  for (const auto& k : corrs) {
    ms.push_back({{"ax", k.q.x}, {"ay", k.q.y}, {"bx", k.c.x}, {"by", k.c.y}, {"confidence", k.confidence}});
  }
  return {{"matches", ms}};
}

inline json detect_response(const DetectorOutput& out) {
  json ds = json::array();
  for (const auto& d : out.detections) ds.push_back({{"box", box_json(d.box)}, {"score", d.score}});
  return {{"supports_prompts", out.supports_prompts}, {"detections", ds}};
}

/// The map's image size is not on the wire; it is the size of the image that was sent.
inline FeatureMap decode_features(const json& body, int image_w, int image_h) {
  FeatureMap m;
  m.dim = require_int(body, "dim");
  m.stride = require_int(body, "stride");
  m.grid_w = require_int(body, "grid_w");
  m.grid_h = require_int(body, "grid_h");
  m.image_w = image_w;
  m.image_h = image_h;
  const json& values = require(body, "values");
  if (!values.is_array()) fail(ErrorCode::SchemaViolation, "values");
  m.values.reserve(values.size());
  for (const auto& v : values) {
    if (!v.is_number()) fail(ErrorCode::SchemaViolation, "values");
    m.values.push_back(v.get<float>());
  }
  try {
    m.validate();
  } catch (const Error& e) {
    fail(ErrorCode::SchemaViolation, std::string("feature map: ") + e.what());
  }
  return m;
}

inline std::vector<Correspondence> decode_matches(const json& body, int query_w, int query_h, int crop_w,
                                                  int crop_h) {
  const json& ms = require(body, "matches");
  if (!ms.is_array()) fail(ErrorCode::SchemaViolation, "matches");
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const std::string path = "matches[" + std::to_string(i) + "]";
    Correspondence k{{require_number(ms[i], "ax", path), require_number(ms[i], "ay", path)},
                     {require_number(ms[i], "bx", path), require_number(ms[i], "by", path)},
                     require_number(ms[i], "confidence", path)};
    const bool in_bounds = k.q.x >= 0 && k.q.y >= 0 && k.q.x <= query_w && k.q.y <= query_h && k.c.x >= 0 &&
                           k.c.y >= 0 && k.c.x <= crop_w && k.c.y <= crop_h;
    if (!in_bounds || !(k.confidence >= 0.0 && k.confidence <= 1.0)) fail(ErrorCode::SchemaViolation, path);
    out.push_back(k);
  }
  return out;
}

inline DetectorOutput decode_detect(const json& body) {
  DetectorOutput out;
  out.supports_prompts = require_bool(body, "supports_prompts");
  const json& ds = require(body, "detections");
  if (!ds.is_array()) fail(ErrorCode::SchemaViolation, "detections");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string path = "detections[" + std::to_string(i) + "]";
    Detection d{require_box(ds[i], path), require_number(ds[i], "score", path), DetectionSource::Detector};
    if (!(d.score >= 0.0 && d.score <= 1.0)) fail(ErrorCode::SchemaViolation, path + ".score");
    out.detections.push_back(d);
  }
  return out;
}

}  // namespace wire

/// Where the sidecar lives, e.g. "http://127.0.0.1:8765" (an optional path prefix is kept).
struct Endpoint {
  std::string url;
  std::chrono::milliseconds timeout{30000};
};

namespace detail {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string prefix;
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0) {
    fail(ErrorCode::InvalidArgument, "endpoint must be an http:// URL: " + url);
  }
  const auto slash = url.find('/', scheme + 3);
  ParsedUrl p;
  p.scheme_host_port = url.substr(0, slash);
  if (slash != std::string::npos) p.prefix = url.substr(slash);
  while (!p.prefix.empty() && p.prefix.back() == '/') p.prefix.pop_back();
  if (p.scheme_host_port.size() <= scheme + 3) fail(ErrorCode::InvalidArgument, "endpoint has no host: " + url);
  return p;
}

inline std::string transport_kind(httplib::Error err) {
  switch (err) {
    case httplib::Error::ConnectionTimeout:
    case httplib::Error::Read:
      return "timeout";
    default:
      return "connection";
  }
}

}  // namespace detail

/// One HTTP request: GET when `request` is null, POST with a JSON body
/// otherwise. Transport failures and non-2xx statuses become
/// BackendUnavailable; an undecodable body is a SchemaViolation.
inline nlohmann::json remote_call(const Endpoint& endpoint, const std::string& path,
                                  const nlohmann::json& request = nullptr) {
  const auto url = detail::parse_url(endpoint.url);
  httplib::Client client(url.scheme_host_port);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  const std::string target = url.prefix + path;
  auto res = request.is_null() ? client.Get(target)
                               : client.Post(target, request.dump(), "application/json");
  if (!res) {
    fail(ErrorCode::BackendUnavailable,
         detail::transport_kind(res.error()) + " " + endpoint.url + target + " (" + httplib::to_string(res.error()) + ")");
  }
  if (res->status < 200 || res->status >= 300) {
    fail(ErrorCode::BackendUnavailable, "status " + std::to_string(res->status) + " from " + endpoint.url + target);
  }
  try {
    auto body = nlohmann::json::parse(res->body);
    if (!body.is_object()) fail(ErrorCode::SchemaViolation, "response body is not a JSON object");
    return body;
  } catch (const nlohmann::json::parse_error&) {
    fail(ErrorCode::SchemaViolation, "response body is not JSON");
  }
}

inline nlohmann::json remote_health(const Endpoint& endpoint) {
  auto body = remote_call(endpoint, "/v1/health");
  if (wire::require_string(body, "status") != "ok") {
    fail(ErrorCode::BackendUnavailable, "health status is not ok at " + endpoint.url);
  }
  return body;
}

class RemoteFeatureExtractor final : public FeatureExtractor {
 public:
  explicit RemoteFeatureExtractor(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  FeatureMap extract(const Image& image) const override {
    const auto body = remote_call(endpoint_, "/v1/features", wire::features_request(image));
    return wire::decode_features(body, image.width(), image.height());
  }

 private:
  Endpoint endpoint_;
};

class RemotePairMatcher final : public PairMatcher {
 public:
  explicit RemotePairMatcher(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::vector<Correspondence> match(const Image& query, const Image& crop) const override {
    const auto body = remote_call(endpoint_, "/v1/match", wire::match_request(query, crop));
    return wire::decode_matches(body, query.width(), query.height(), crop.width(), crop.height());
  }

 private:
  Endpoint endpoint_;
};

class RemoteDetector final : public PromptableDetector {
 public:
  explicit RemoteDetector(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
  DetectorOutput detect(const Image& image, const std::string& text,
                        std::span<const BoxPrompt> prompts) const override {
    const auto body = remote_call(endpoint_, "/v1/detect", wire::detect_request(image, text, prompts));
    return wire::decode_detect(body);
  }

 private:
  Endpoint endpoint_;
};

inline Backends remote_backends(const Endpoint& endpoint) {
  return {std::make_shared<RemoteFeatureExtractor>(endpoint), std::make_shared<RemotePairMatcher>(endpoint),
          std::make_shared<RemoteDetector>(endpoint)};
}

}  // namespace ebod

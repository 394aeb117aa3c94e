#pragma once

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ebod/backends.hpp"
#include "ebod/candidates.hpp"
#include "ebod/error.hpp"
#include "ebod/image.hpp"
#include "ebod/prompts.hpp"
#include "ebod/verification.hpp"

namespace ebod {

struct RunConfig {
  CandidateParams candidate;
  VerifyParams verify;
  double tau = 0.5;
  std::string backend = "synthetic";  // "synthetic" | "remote"
  std::optional<std::string> endpoint;
  std::uint64_t seed = 0;
  /// Test hook: replaces min_inlier_ratio after validation. Never serialized.
  std::optional<double> gate_override;

  /// Throws InvalidArgument naming the offending field.
  void validate() const {
    auto check = [](const char* field, auto&& fn) {
      try {
        fn();
      } catch (const Error& e) {
        const std::string what = e.what();
        const auto colon = what.find(": ");
        fail(ErrorCode::InvalidArgument,
             std::string("config field '") + field + "': " + (colon == std::string::npos ? what : what.substr(colon + 2)));
      }
    };
    check("sigma", [&] { CandidateParams{candidate.sigma}.validate(); });
    check("eps", [&] {
      CandidateParams p;
      p.eps = candidate.eps;
      p.validate();
    });
    check("min_samples", [&] {
      if (candidate.min_samples < 1) fail(ErrorCode::InvalidArgument, "must be >= 1");
    });
    check("merge_iou", [&] {
      if (!(candidate.merge_iou >= 0.0 && candidate.merge_iou <= 1.0)) fail(ErrorCode::InvalidArgument, "must be in [0, 1]");
    });
    check("min_matches", [&] {
      if (verify.min_matches < 4) fail(ErrorCode::InvalidArgument, "must be >= 4");
    });
    check("min_inlier_ratio", [&] {
      if (!(verify.min_inlier_ratio > 0.0 && verify.min_inlier_ratio <= 1.0)) {
        fail(ErrorCode::InvalidArgument, "must be in (0, 1]");
      }
    });
    check("reproj_threshold", [&] {
      if (!(verify.reproj_threshold > 0.0)) fail(ErrorCode::InvalidArgument, "must be > 0");
    });
    check("ransac_iterations", [&] {
      if (verify.ransac_iterations < 1) fail(ErrorCode::InvalidArgument, "must be >= 1");
    });
    check("tau", [&] {
      if (!(tau > 0.0 && tau <= 1.0)) fail(ErrorCode::InvalidArgument, "must be in (0, 1]");
    });
    check("backend", [&] {
      if (backend != "synthetic" && backend != "remote") {
        fail(ErrorCode::InvalidArgument, "must be 'synthetic' or 'remote', got '" + backend + "'");
      }
      if (backend == "remote" && (!endpoint || endpoint->empty())) {
        fail(ErrorCode::InvalidArgument, "remote backend needs an endpoint");
      }
    });
  }
};

/// An exemplar ready for matching: identity, polarity and decoded crop.
struct ExemplarInput {
  std::string id;
  ExemplarLabel label = ExemplarLabel::Positive;
  Image image;
};

struct ExemplarTrace {
  std::string id;
  ExemplarLabel label = ExemplarLabel::Positive;
  /// Set when the exemplar could not be searched at all (e.g. a featureless crop).
  std::optional<std::string> error;
  std::vector<CandidateRegion> candidates;
  std::vector<VerifiedMatch> verified;
  std::vector<Rejection> rejections;
};

struct PipelineTrace {
  std::vector<ExemplarTrace> exemplars;
  std::vector<BoxPrompt> prompts;
  bool detector_supports_prompts = false;
};

struct Timings {
  double candidates_ms = 0.0;
  double verify_ms = 0.0;
  double detect_ms = 0.0;
  double total_ms = 0.0;
};

struct PipelineResult {
  std::vector<Detection> detections;
  PipelineTrace trace;
  Timings timings;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent RANSAC stream per (exemplar, candidate), fixed by the run seed.
inline std::uint64_t candidate_seed(std::uint64_t run_seed, std::size_t exemplar, std::size_t candidate) noexcept {
  return splitmix64(splitmix64(run_seed ^ splitmix64(exemplar + 1)) ^ (candidate + 1));
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// Locates one exemplar in the target: candidates from feature similarity, then
/// per-candidate matching and geometric verification. Only backend failures throw.
inline ExemplarTrace search_exemplar(const Image& target, const FeatureMap& target_map, const ExemplarInput& ex,
                                     std::size_t exemplar_index, const Backends& backends, const RunConfig& config,
                                     Timings& timings) {
  ExemplarTrace tr{ex.id, ex.label, std::nullopt, {}, {}, {}};
  detail::Stopwatch cand_clock;
  try {
    const FeatureMap query_map = backends.features->extract(ex.image);
    tr.candidates = generate_candidates(query_map, target_map, config.candidate);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BackendUnavailable) throw;
    tr.error = e.what();
    timings.candidates_ms += cand_clock.ms();
    return tr;
  }
  timings.candidates_ms += cand_clock.ms();

  detail::Stopwatch verify_clock;
  const QuerySize qsize{static_cast<double>(ex.image.width()), static_cast<double>(ex.image.height())};
  for (const auto& cand : tr.candidates) {
    const PixelRect rect = covering_rect(cand.box, target.width(), target.height());
    std::vector<Correspondence> corrs;
    if (!rect.empty()) {
      corrs = backends.matcher->match(ex.image, target.crop(rect));
      // Express crop coordinates relative to the candidate box's own corner.
      const Point2 shift{rect.x0 - cand.box.x_min, rect.y0 - cand.box.y_min};
      for (auto& k : corrs) k.c = k.c + shift;
    }
    VerifyParams vp = config.verify;
    vp.rng_seed = detail::candidate_seed(config.seed, exemplar_index, cand.index);
    if (config.gate_override) vp.min_inlier_ratio = *config.gate_override;
    auto outcome = verify_candidate(qsize, cand, corrs, vp, target.width(), target.height());
    if (auto* m = std::get_if<VerifiedMatch>(&outcome)) {
      tr.verified.push_back(std::move(*m));
    } else {
      tr.rejections.push_back(std::get<Rejection>(outcome));
    }
  }
  timings.verify_ms += verify_clock.ms();
  return tr;
}

/// Candidate search and verification for every exemplar, one detector call with
/// the text prompt and all box prompts, then the fallback filter if the detector
/// could not consume the prompts.
inline PipelineResult run_pipeline(const Image& target, const std::string& text_prompt,
                                   std::span<const ExemplarInput> exemplars, const Backends& backends,
                                   const RunConfig& config) {
  config.validate();
  if (!backends.features || !backends.matcher || !backends.detector) {
    fail(ErrorCode::BackendUnavailable, "backend set is incomplete");
  }
  if (target.empty()) fail(ErrorCode::ImageDecodeError, "target image is empty");

  detail::Stopwatch total;
  PipelineResult result;
  if (!exemplars.empty()) {
    detail::Stopwatch cand_clock;
    const FeatureMap target_map = backends.features->extract(target);
    result.timings.candidates_ms += cand_clock.ms();
    for (std::size_t i = 0; i < exemplars.size(); ++i) {
      auto tr = search_exemplar(target, target_map, exemplars[i], i, backends, config, result.timings);
      const auto prompts = assemble_prompts(tr.verified, tr.label, tr.id);
      result.trace.prompts.insert(result.trace.prompts.end(), prompts.begin(), prompts.end());
      result.trace.exemplars.push_back(std::move(tr));
    }
  }

  detail::Stopwatch detect_clock;
  DetectorOutput out = backends.detector->detect(target, text_prompt, result.trace.prompts);
  result.trace.detector_supports_prompts = out.supports_prompts;
  result.detections = out.supports_prompts ? std::move(out.detections)
                                           : fallback_post_filter(out.detections, result.trace.prompts, config.tau);
  sort_detections(result.detections);
  result.timings.detect_ms = detect_clock.ms();
  result.timings.total_ms = total.ms();
  return result;
}

// ---------------------------------------------------------------------------
// RunResult document

namespace report {

using ojson = nlohmann::ordered_json;

inline ojson box(const BBox& b) { return ojson::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

inline ojson detections(std::span<const Detection> dets) {
  ojson arr = ojson::array();
  for (const auto& d : dets) {
    arr.push_back({{"box", box(d.box)}, {"score", d.score}, {"source", std::string(to_string(d.source))}});
  }
  return arr;
}

inline ojson prompt(const BoxPrompt& p) {
  return {{"box", box(p.box)},
          {"polarity", p.polarity},
          {"source_exemplar", p.source_exemplar},
          {"candidate_index", p.candidate_index}};
}

inline ojson candidate(const CandidateRegion& c) {
  ojson pts = ojson::array();
  for (const auto& p : c.cluster_points) pts.push_back(ojson::array({p.px, p.py, p.score}));
  return {{"index", c.index}, {"box", box(c.box)}, {"mean_score", c.mean_score}, {"cluster_points", pts}};
}

inline ojson verified(const VerifiedMatch& m) {
  ojson h = ojson::array();
  for (const auto& row : m.homography.matrix())
    for (double v : row) h.push_back(v);
  ojson quad = ojson::array();
  for (const auto& c : m.quad_target.corners) quad.push_back(ojson::array({c.x, c.y}));
  return {{"candidate_index", m.candidate_index}, {"box", box(m.box_target)},   {"quad", quad},
          {"homography", h},                      {"inlier_ratio", m.inlier_ratio}, {"match_count", m.match_count}};
}

inline ojson rejection(const Rejection& r) {
  return {{"candidate_index", r.candidate_index},
          {"reason", std::string(to_string(r.reason))},
          {"inlier_ratio", r.inlier_ratio},
          {"match_count", r.match_count}};
}

inline ojson trace(const PipelineTrace& t) {
  ojson ex = ojson::array();
  for (const auto& e : t.exemplars) {
    ojson j;
    j["id"] = e.id;
    j["label"] = std::string(to_string(e.label));
    j["error"] = e.error ? ojson(*e.error) : ojson(nullptr);
    j["candidates"] = ojson::array();
    for (const auto& c : e.candidates) j["candidates"].push_back(candidate(c));
    j["verified"] = ojson::array();
    for (const auto& m : e.verified) j["verified"].push_back(verified(m));
    j["rejections"] = ojson::array();
    for (const auto& r : e.rejections) j["rejections"].push_back(rejection(r));
    ex.push_back(std::move(j));
  }
  ojson ps = ojson::array();
  for (const auto& p : t.prompts) ps.push_back(prompt(p));
  return {{"exemplars", ex}, {"prompts", ps}, {"detector_supports_prompts", t.detector_supports_prompts}};
}

inline ojson config(const RunConfig& c) {
  ojson j;
  j["sigma"] = c.candidate.sigma;
  j["eps"] = c.candidate.eps ? ojson(*c.candidate.eps) : ojson(nullptr);
  j["min_samples"] = c.candidate.min_samples;
  j["merge_iou"] = c.candidate.merge_iou;
  j["min_matches"] = c.verify.min_matches;
  j["min_inlier_ratio"] = c.verify.min_inlier_ratio;
  j["reproj_threshold"] = c.verify.reproj_threshold;
  j["ransac_iterations"] = c.verify.ransac_iterations;
  j["tau"] = c.tau;
  j["backend"] = c.backend;
  j["endpoint"] = c.endpoint ? ojson(*c.endpoint) : ojson(nullptr);
  j["seed"] = c.seed;
  return j;
}

inline ojson timings(const Timings& t) {
  return {{"candidates_ms", t.candidates_ms},
          {"verify_ms", t.verify_ms},
          {"detect_ms", t.detect_ms},
          {"total_ms", t.total_ms}};
}

inline constexpr int kSchemaVersion = 1;

inline ojson run_result(const PipelineResult& r, const RunConfig& cfg, bool include_timings) {
  ojson j;
  j["schema"] = kSchemaVersion;
  j["detections"] = detections(r.detections);
  j["trace"] = trace(r.trace);
  j["config"] = config(cfg);
  j["timings"] = timings(include_timings ? r.timings : Timings{});
  return j;
}

/// Pretty, insertion-ordered, shortest round-trip doubles.
inline std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

}  // namespace report

// ---------------------------------------------------------------------------
// Config file: a flat JSON object; unknown keys are rejected.

inline void apply_config_json(RunConfig& cfg, const nlohmann::json& doc) {
  if (!doc.is_object()) fail(ErrorCode::InvalidArgument, "config must be a JSON object");
  auto number = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) fail(ErrorCode::InvalidArgument, "config field '" + key + "' must be a number");
    return v.get<double>();
  };
  auto count = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      fail(ErrorCode::InvalidArgument, "config field '" + key + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  };
  for (const auto& [key, v] : doc.items()) {
    if (key == "sigma") {
      cfg.candidate.sigma = number(v, key);
    } else if (key == "eps") {
      cfg.candidate.eps = v.is_null() ? std::nullopt : std::optional<double>(number(v, key));
    } else if (key == "min_samples") {
      cfg.candidate.min_samples = count(v, key);
    } else if (key == "merge_iou") {
      cfg.candidate.merge_iou = number(v, key);
    } else if (key == "min_matches") {
      cfg.verify.min_matches = count(v, key);
    } else if (key == "min_inlier_ratio") {
      cfg.verify.min_inlier_ratio = number(v, key);
    } else if (key == "reproj_threshold") {
      cfg.verify.reproj_threshold = number(v, key);
    } else if (key == "ransac_iterations") {
      cfg.verify.ransac_iterations = count(v, key);
    } else if (key == "tau") {
      cfg.tau = number(v, key);
    } else if (key == "backend") {
      if (!v.is_string()) fail(ErrorCode::InvalidArgument, "config field 'backend' must be a string");
      cfg.backend = v.get<std::string>();
    } else if (key == "endpoint") {
      if (!v.is_null() && !v.is_string()) fail(ErrorCode::InvalidArgument, "config field 'endpoint' must be a string");
      cfg.endpoint = v.is_null() ? std::nullopt : std::optional<std::string>(v.get<std::string>());
    } else if (key == "seed") {
      cfg.seed = count(v, key);
    } else {
      fail(ErrorCode::InvalidArgument, "unknown config field '" + key + "'");
    }
  }
}

}  // namespace ebod

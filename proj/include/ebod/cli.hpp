#pragma once

// Eigen (via pipeline) must precede httplib (via remote).
#include "ebod/pipeline.hpp"
#include "ebod/remote.hpp"
#include "ebod/scenes.hpp"
#include "ebod/store.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace ebod::cli {

/// Exit status by error class.
inline int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownTextPrompt:
      return 2;
    case ErrorCode::BackendUnavailable:
    case ErrorCode::SchemaViolation:
      return 3;
    case ErrorCode::DuplicateId:
    case ErrorCode::CropOutOfBounds:
    case ErrorCode::CropTooSmall:
    case ErrorCode::IoFailure:
    case ErrorCode::ManifestMissing:
    case ErrorCode::ManifestCorrupt:
    case ErrorCode::MissingImage:
    case ErrorCode::UnknownId:
      return 4;
    case ErrorCode::ImageDecodeError:
      return 5;
    default:
      return 1;
  }
}

struct DetectOptions {
  std::string target;
  std::string text;
  std::string store;
  std::optional<std::string> backend;
  std::optional<std::string> endpoint;
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  bool timings = false;
  int timeout_ms = 30000;
  std::optional<double> sigma, eps, merge_iou, min_inlier_ratio, reproj_threshold, tau;
  std::optional<std::size_t> min_samples, min_matches, ransac_iterations;
  std::optional<double> gate_override;
};

/// Defaults < EBOD_ENDPOINT < --config file < individual flags.
inline RunConfig resolve_config(const DetectOptions& o) {
  RunConfig cfg;
  if (const char* env = std::getenv("EBOD_ENDPOINT"); env && *env) cfg.endpoint = env;
  if (o.config) {
    nlohmann::json doc;
    try {
      const auto bytes = read_file_bytes(*o.config);
      doc = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::InvalidArgument, "config " + *o.config + " is not valid JSON (byte " + std::to_string(e.byte) + ")");
    } catch (const Error& e) {
      fail(ErrorCode::InvalidArgument, "cannot read config " + *o.config);
    }
    apply_config_json(cfg, doc);
  }
  if (o.backend) cfg.backend = *o.backend;
  if (o.endpoint) cfg.endpoint = *o.endpoint;
  if (o.seed) cfg.seed = *o.seed;
  if (o.sigma) cfg.candidate.sigma = *o.sigma;
  if (o.eps) cfg.candidate.eps = *o.eps;
  if (o.min_samples) cfg.candidate.min_samples = *o.min_samples;
  if (o.merge_iou) cfg.candidate.merge_iou = *o.merge_iou;
  if (o.min_matches) cfg.verify.min_matches = *o.min_matches;
  if (o.min_inlier_ratio) cfg.verify.min_inlier_ratio = *o.min_inlier_ratio;
  if (o.reproj_threshold) cfg.verify.reproj_threshold = *o.reproj_threshold;
  if (o.ransac_iterations) cfg.verify.ransac_iterations = *o.ransac_iterations;
  if (o.tau) cfg.tau = *o.tau;
  cfg.gate_override = o.gate_override;
  cfg.validate();
  return cfg;
}

/// Runs one detection and returns the RunResult document text.
inline std::string detect_document(const DetectOptions& o) {
  const RunConfig cfg = resolve_config(o);
  const Image target = load_png(o.target);
  const ExemplarStore store = load_store(o.store);
  std::vector<ExemplarInput> exemplars;
  for (const auto& e : store.listing()) exemplars.push_back({e.id, e.label, store.load_image(e)});

  Backends backends;
  if (cfg.backend == "remote") {
    const Endpoint ep{*cfg.endpoint, std::chrono::milliseconds(o.timeout_ms)};
    remote_health(ep);
    backends = remote_backends(ep);
  } else {
    backends = synthetic_backends();
  }
  const auto result = run_pipeline(target, o.text, exemplars, backends, cfg);
  return report::dump(report::run_result(result, cfg, o.timings));
}

inline int cmd_detect(const DetectOptions& o, std::ostream& out) {
  const std::string doc = detect_document(o);
  if (o.out) {
    write_file_bytes(*o.out, std::span(reinterpret_cast<const std::uint8_t*>(doc.data()), doc.size()));
  } else {
    out << doc;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// exemplar add | list | rm

struct ExemplarAddOptions {
  std::string store;
  std::string image;
  std::string label;
  std::optional<std::string> crop;  // x,y,w,h
  std::optional<std::string> text_tag;
  std::string note;
};

inline PixelRect parse_crop(const std::string& s) {
  std::vector<int> v;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "--crop must be x,y,w,h integers, got '" + s + "'");
    }
  }
  if (v.size() != 4) fail(ErrorCode::InvalidArgument, "--crop must be x,y,w,h integers, got '" + s + "'");
  return {v[0], v[1], v[0] + v[2], v[1] + v[3]};
}

inline int cmd_exemplar_add(const ExemplarAddOptions& o, std::ostream& out) {
  const auto label = parse_label(o.label);
  if (!label) fail(ErrorCode::InvalidArgument, "--label must be positive or negative, got '" + o.label + "'");
  NewExemplar req;
  if (o.crop) req.crop = parse_crop(*o.crop);
  req.label = *label;
  req.text_tag = o.text_tag;
  req.note = o.note;
  const Image source = load_png(o.image);
  const auto e = add_exemplar(o.store, source, req);
  out << e.id << "\n";
  return 0;
}

inline int cmd_exemplar_list(const std::string& store_dir, bool json, std::ostream& out) {
  const auto store = load_store(store_dir);
  const auto records = store.listing();
  if (json) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& e : records) arr.push_back(ExemplarStore::to_json(e));
    out << arr.dump(2) << "\n";
    return 0;
  }
  for (const auto& e : records) {
    out << e.id << " " << to_string(e.label) << " " << e.crop_w << "x" << e.crop_h << " "
        << format_rfc3339(e.created_at) << "\n";
  }
  return 0;
}

inline int cmd_exemplar_rm(const std::string& store_dir, const std::string& id, std::ostream& out) {
  auto store = load_store(store_dir);
  store.remove(id);
  out << "removed " << id << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// selftest

struct SelftestOptions {
  int seeds = 20;
  std::uint64_t seed = 0;
  std::optional<double> gate_override;
};

namespace detail {

struct TempTree {
  std::filesystem::path path;
  TempTree() {
    std::random_device rd;
    const auto base = std::filesystem::temp_directory_path();
    for (;;) {
      path = base / ("ebod-selftest-" + std::to_string(rd()) + std::to_string(rd()));
      if (std::filesystem::create_directory(path)) break;
    }
  }
  ~TempTree() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline std::vector<BBox> boxes_of(const std::string& doc) {
  std::vector<BBox> out;
  const auto parsed = nlohmann::json::parse(doc);
  for (const auto& d : parsed.at("detections")) {
    const auto& b = d.at("box");
    out.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
  }
  return out;
}

inline bool any_overlap(const std::vector<BBox>& boxes, const BBox& ref, double iou) {
  return std::any_of(boxes.begin(), boxes.end(), [&](const BBox& b) { return bbox_iou(b, ref) >= iou; });
}

/// Writes the scene to disk, stores its exemplar and runs detect through the CLI path.
inline std::string run_scene(const std::filesystem::path& dir, const scenes::PlantedScene& s,
                             std::optional<ExemplarLabel> label, const SelftestOptions& opt) {
  std::filesystem::create_directories(dir);
  save_png(dir / "target.png", s.target);
  ExemplarStore::init(dir / "store");
  if (label) {
    NewExemplar req;
    req.crop = s.exemplar_crop;
    req.label = *label;
    req.text_tag = s.text;
    req.created_at = Timestamp(std::chrono::seconds(0));
    add_exemplar(dir / "store", s.source_view, req);
  }
  DetectOptions d;
  d.target = (dir / "target.png").string();
  d.text = s.text;
  d.store = (dir / "store").string();
  d.seed = opt.seed;
  d.gate_override = opt.gate_override;
  return detect_document(d);
}

}  // namespace detail

inline int cmd_selftest(const SelftestOptions& opt, std::ostream& out, std::ostream& err) {
  detail::TempTree tmp;
  struct Property {
    std::string name;
    bool pass;
    std::string detail;
  };
  std::vector<Property> results;
  const int n = opt.seeds;
  auto seed_dir = [&](const char* kind, int i) { return tmp.path / (std::string(kind) + "-" + std::to_string(i)); };
  auto count_line = [](int ok, int total) { return std::to_string(ok) + "/" + std::to_string(total); };

  {
    int ok = 0;
    for (int i = 0; i < n; ++i) {
      const auto s = scenes::missed_detection_scene(static_cast<std::uint64_t>(i));
      const auto boxes = detail::boxes_of(detail::run_scene(seed_dir("missed", i), s, ExemplarLabel::Positive, opt));
      ok += detail::any_overlap(boxes, s.truth_box, 0.8) ? 1 : 0;
    }
    const int need = (n * 9 + 9) / 10;
    results.push_back({"missed-detection-recovery", ok >= need,
                       count_line(ok, n) + " scenes with IoU >= 0.8, need " + std::to_string(need)});
  }
  {
    int ok = 0;
    for (int i = 0; i < n; ++i) {
      const auto s = scenes::look_alike_scene(static_cast<std::uint64_t>(i));
      const auto boxes = detail::boxes_of(detail::run_scene(seed_dir("fp", i), s, ExemplarLabel::Negative, opt));
      bool pass = !detail::any_overlap(boxes, s.truth_box, 0.5);
      if (s.look_alike_box) pass = pass && detail::any_overlap(boxes, *s.look_alike_box, 0.5);
      for (const auto& g : s.genuine_boxes) pass = pass && detail::any_overlap(boxes, g, 0.5);
      ok += pass ? 1 : 0;
    }
    results.push_back({"false-positive-suppression", ok == n,
                       count_line(ok, n) + " scenes with the distractor suppressed and look-alikes kept"});
  }
  {
    int ok = 0;
    for (int i = 0; i < n; ++i) {
      scenes::PlantedScene s;
      s.target = scenes::random_blob_scene(static_cast<std::uint64_t>(i));
      const std::string doc = detail::run_scene(seed_dir("pass", i), s, std::nullopt, opt);
      auto bare = SyntheticPromptDetector().detect(s.target, s.text, {}).detections;
      sort_detections(bare);
      ok += nlohmann::ordered_json::parse(doc).at("detections").dump() == report::detections(bare).dump() ? 1 : 0;
    }
    results.push_back({"empty-store-passthrough", ok == n, count_line(ok, n) + " scenes identical to bare detector"});
  }
  {
    const auto s = scenes::missed_detection_scene(0);
    const auto a = detail::run_scene(seed_dir("det-a", 0), s, ExemplarLabel::Positive, opt);
    const auto b = detail::run_scene(seed_dir("det-b", 0), s, ExemplarLabel::Positive, opt);
    results.push_back({"determinism", a == b, a == b ? "identical RunResult text" : "RunResult text differs"});
  }

  const Property* first_fail = nullptr;
  for (const auto& p : results) {
    out << (p.pass ? "PASS " : "FAIL ") << p.name << " (" << p.detail << ")\n";
    if (!p.pass && !first_fail) first_fail = &p;
  }
  if (first_fail) {
    err << "selftest failed: " << first_fail->name << "\n";
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

/// Parses `args` (without the program name) and runs one command.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Example-based object detection: steer a promptable detector with stored exemplars.", "ebod"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  DetectOptions det;
  auto* detect = app.add_subcommand("detect", "Run the pipeline on one target image");
  detect->add_option("--target", det.target, "Target image (PNG)")->required();
  detect->add_option("--text", det.text, "Text prompt for the detector")->required();
  detect->add_option("--store", det.store, "Exemplar store directory")->required();
  detect->add_option("--backend", det.backend, "synthetic | remote");
  detect->add_option("--endpoint", det.endpoint, "Sidecar URL for the remote backend (fallback: EBOD_ENDPOINT)");
  detect->add_option("--config", det.config, "JSON config file");
  detect->add_option("--out", det.out, "Write the RunResult here instead of stdout");
  detect->add_option("--seed", det.seed, "RANSAC seed (default 0)");
  detect->add_flag("--timings", det.timings, "Record per-stage wall-clock timings");
  detect->add_option("--timeout-ms", det.timeout_ms, "Remote request timeout")->capture_default_str();
  detect->add_option("--sigma", det.sigma, "Cosine similarity threshold");
  detect->add_option("--eps", det.eps, "DBSCAN radius in pixels");
  detect->add_option("--min-samples", det.min_samples, "DBSCAN core-point count");
  detect->add_option("--merge-iou", det.merge_iou, "Candidate merge IoU");
  detect->add_option("--min-matches", det.min_matches, "Minimum correspondences per candidate");
  detect->add_option("--min-inlier-ratio", det.min_inlier_ratio, "Verification gate");
  detect->add_option("--reproj-threshold", det.reproj_threshold, "RANSAC inlier threshold in pixels");
  detect->add_option("--ransac-iterations", det.ransac_iterations, "RANSAC iterations");
  detect->add_option("--tau", det.tau, "Prompt overlap threshold for the fallback filter");

  auto* exemplar = app.add_subcommand("exemplar", "Manage the exemplar store");
  exemplar->require_subcommand(1);
  ExemplarAddOptions add;
  auto* ex_add = exemplar->add_subcommand("add", "Store a crop of an image as an exemplar");
  ex_add->add_option("--store", add.store, "Exemplar store directory (created if absent)")->required();
  ex_add->add_option("--image", add.image, "Source image (PNG)")->required();
  ex_add->add_option("--label", add.label, "positive (missed) | negative (false alarm)")->required();
  ex_add->add_option("--crop", add.crop, "Crop rectangle x,y,w,h in pixels");
  ex_add->add_option("--text-tag", add.text_tag, "Text prompt the error occurred under");
  ex_add->add_option("--note", add.note, "Free-form note");

  std::string list_store;
  bool list_json = false;
  auto* ex_list = exemplar->add_subcommand("list", "List exemplars by creation time");
  ex_list->add_option("--store", list_store, "Exemplar store directory")->required();
  ex_list->add_flag("--json", list_json, "Print a JSON array");

  std::string rm_store, rm_id;
  auto* ex_rm = exemplar->add_subcommand("rm", "Remove an exemplar");
  ex_rm->add_option("--store", rm_store, "Exemplar store directory")->required();
  ex_rm->add_option("--id", rm_id, "Exemplar id")->required();

  SelftestOptions st;
  auto* selftest = app.add_subcommand("selftest", "Check end-to-end properties on generated scenes");
  selftest->add_option("--seeds", st.seeds, "Scenes per property")->capture_default_str()->check(CLI::Range(1, 1000));
  selftest->add_option("--seed", st.seed, "RANSAC seed")->capture_default_str();
  selftest->add_option("--gate-override", st.gate_override)->group("");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (detect->parsed()) return cmd_detect(det, out);
    if (ex_add->parsed()) return cmd_exemplar_add(add, out);
    if (ex_list->parsed()) return cmd_exemplar_list(list_store, list_json, out);
    if (ex_rm->parsed()) return cmd_exemplar_rm(rm_store, rm_id, out);
    if (selftest->parsed()) return cmd_selftest(st, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ebod::cli

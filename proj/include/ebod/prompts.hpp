#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ebod/error.hpp"
#include "ebod/geometry.hpp"
#include "ebod/verification.hpp"

namespace ebod {

/// Positive: a past missed detection that must be found.
/// Negative: a past false alarm that must be suppressed.
enum class ExemplarLabel { Positive, Negative };

inline constexpr std::string_view to_string(ExemplarLabel l) noexcept {
  return l == ExemplarLabel::Positive ? "positive" : "negative";
}

inline std::optional<ExemplarLabel> parse_label(std::string_view s) noexcept {
  if (s == "positive") return ExemplarLabel::Positive;
  if (s == "negative") return ExemplarLabel::Negative;
  return std::nullopt;
}

struct BoxPrompt {
  BBox box;
  bool polarity = true;  // true = must detect, false = must not detect
  std::string source_exemplar;
  std::size_t candidate_index = 0;

  friend bool operator==(const BoxPrompt&, const BoxPrompt&) = default;
};

enum class DetectionSource { Detector, Injected };

inline constexpr std::string_view to_string(DetectionSource s) noexcept {
  return s == DetectionSource::Detector ? "detector" : "injected";
}

struct Detection {
  BBox box;
  double score = 0.0;
  DetectionSource source = DetectionSource::Detector;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Descending score, ties by ascending x_min; otherwise input order is kept.
inline void sort_detections(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.box.x_min < b.box.x_min;
  });
}

/// One prompt per verified match with polarity taken from the exemplar label.
/// Near-duplicates (IoU > 0.9) keep the match with the higher inlier ratio.
inline std::vector<BoxPrompt> assemble_prompts(std::span<const VerifiedMatch> verified, ExemplarLabel label,
                                               const std::string& exemplar_id) {
  constexpr double kDuplicateIou = 0.9;
  std::vector<std::size_t> order(verified.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return verified[a].inlier_ratio > verified[b].inlier_ratio;
  });

  std::vector<bool> keep(verified.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    const bool dup = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return bbox_iou(verified[k].box_target, verified[i].box_target) > kDuplicateIou;
    });
    if (!dup) {
      kept.push_back(i);
      keep[i] = true;
    }
  }

  std::vector<BoxPrompt> prompts;
  for (std::size_t i = 0; i < verified.size(); ++i) {
    if (keep[i]) {
      prompts.push_back({verified[i].box_target, label == ExemplarLabel::Positive, exemplar_id,
                         verified[i].candidate_index});
    }
  }
  return prompts;
}

/// Applies labeled-prompt semantics outside the detector: drop detections that
/// overlap a false prompt by IoU >= tau, then inject a detection for every true
/// prompt that no surviving detection covers. A true prompt that itself overlaps
/// a false prompt by IoU >= tau is not injected: suppression wins conflicts.
inline std::vector<Detection> fallback_post_filter(std::span<const Detection> raw, std::span<const BoxPrompt> prompts,
                                                   double tau = 0.5) {
  if (!(tau > 0.0 && tau <= 1.0)) fail(ErrorCode::InvalidArgument, "tau must be in (0, 1]");
  std::vector<Detection> out;
  for (const auto& d : raw) {
    const bool suppressed = std::any_of(prompts.begin(), prompts.end(), [&](const BoxPrompt& p) {
      return !p.polarity && bbox_iou(d.box, p.box) >= tau;
    });
    if (!suppressed) out.push_back(d);
  }
  const std::size_t survivors = out.size();
  for (const auto& p : prompts) {
    if (!p.polarity) continue;
    const bool covered = std::any_of(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(survivors),
                                     [&](const Detection& d) { return bbox_iou(d.box, p.box) >= tau; });
    const bool vetoed = std::any_of(prompts.begin(), prompts.end(), [&](const BoxPrompt& f) {
      return !f.polarity && bbox_iou(f.box, p.box) >= tau;
    });
    if (!covered && !vetoed) out.push_back({p.box, 1.0, DetectionSource::Injected});
  }
  return out;
}

}  // namespace ebod

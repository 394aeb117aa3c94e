#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "ebod/candidates.hpp"
#include "ebod/error.hpp"
#include "ebod/geometry.hpp"

namespace ebod {

/// One keypoint match: `q` in query-image pixels, `c` in candidate-crop pixels.
struct Correspondence {
  Point2 q;
  Point2 c;
  double confidence = 1.0;

  friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

struct VerifyParams {
  std::size_t min_matches = 8;
  double min_inlier_ratio = 0.5;
  double reproj_threshold = 3.0;
  std::size_t ransac_iterations = 2000;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (min_matches < 4) fail(ErrorCode::InvalidArgument, "min_matches must be >= 4");
    if (!(min_inlier_ratio > 0.0 && min_inlier_ratio <= 1.0)) {
      fail(ErrorCode::InvalidArgument, "min_inlier_ratio must be in (0, 1]");
    }
    if (!(reproj_threshold > 0.0)) fail(ErrorCode::InvalidArgument, "reproj_threshold must be > 0");
    if (ransac_iterations < 1) fail(ErrorCode::InvalidArgument, "ransac_iterations must be >= 1");
  }
};

namespace detail {

// Similarity transform moving the centroid to the origin with mean distance sqrt(2).
struct Conditioner {
  double cx = 0.0;
  double cy = 0.0;
  double scale = 1.0;

  Point2 apply(const Point2& p) const noexcept { return {(p.x - cx) * scale, (p.y - cy) * scale}; }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d t;
    t << scale, 0, -scale * cx, 0, scale, -scale * cy, 0, 0, 1;
    return t;
  }
  Eigen::Matrix3d inverse_matrix() const {
    Eigen::Matrix3d t;
    t << 1.0 / scale, 0, cx, 0, 1.0 / scale, cy, 0, 0, 1;
    return t;
  }
};

template <typename Get>
Conditioner make_conditioner(std::size_t n, Get get) {
  Conditioner c;
  for (std::size_t i = 0; i < n; ++i) {
    c.cx += get(i).x;
    c.cy += get(i).y;
  }
  c.cx /= static_cast<double>(n);
  c.cy /= static_cast<double>(n);
  double mean_dist = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_dist += std::hypot(get(i).x - c.cx, get(i).y - c.cy);
  mean_dist /= static_cast<double>(n);
  if (!(mean_dist > 0.0)) fail(ErrorCode::DegenerateConfiguration, "all points coincide");
  c.scale = std::sqrt(2.0) / mean_dist;
  return c;
}

inline bool collinear(const Point2& a, const Point2& b, const Point2& c, double tol) noexcept {
  const Point2 u = b - a;
  const Point2 v = c - a;
  return std::abs(u.x * v.y - u.y * v.x) <= tol;
}

}  // namespace detail

/// Normalized DLT: condition both point sets, solve the 2n x 9 system for its
/// smallest right singular vector, undo the conditioning.
inline HomographyMatrix dlt_homography(std::span<const Correspondence> corrs) {
  const std::size_t n = corrs.size();
  if (n < 4) fail(ErrorCode::TooFewMatches, "DLT needs at least 4 correspondences");
  for (const auto& k : corrs) {
    if (!is_finite(k.q) || !is_finite(k.c)) fail(ErrorCode::DegenerateConfiguration, "non-finite point");
  }

  const auto tq = detail::make_conditioner(n, [&](std::size_t i) { return corrs[i].q; });
  const auto tc = detail::make_conditioner(n, [&](std::size_t i) { return corrs[i].c; });

  std::vector<Point2> q(n), c(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = tq.apply(corrs[i].q);
    c[i] = tc.apply(corrs[i].c);
  }

  // A minimal sample determines H only when no three of its points are collinear.
  if (n == 4) {
    constexpr double kTol = 1e-9;
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = a + 1; b < 4; ++b)
        for (std::size_t d = b + 1; d < 4; ++d)
          if (detail::collinear(q[a], q[b], q[d], kTol) || detail::collinear(c[a], c[b], c[d], kTol)) {
            fail(ErrorCode::DegenerateConfiguration, "three sample points are collinear");
          }
  }

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * std::max<std::size_t>(n, 5)), 9);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = q[i].x, y = q[i].y, u = c[i].x, v = c[i].y;
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(r + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  // Zero rows pad the minimal case to a square-or-taller system so V is 9x9.
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(7) > 1e-9 * sv(0))) {
    fail(ErrorCode::DegenerateConfiguration, "correspondence system is rank deficient");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);

  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d full = tc.inverse_matrix() * hn * tq.matrix();

  HomographyMatrix::Storage m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i][j] = full(i, j);
  try {
    return HomographyMatrix(m);
  } catch (const Error&) {
    fail(ErrorCode::DegenerateConfiguration, "estimated homography is singular");
  }
}

/// Forward reprojection error |H q - c|; infinity when q maps to infinity.
inline double reprojection_error(const HomographyMatrix& h, const Correspondence& k) noexcept {
  try {
    return distance(apply_homography(h, k.q), k.c);
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// Indices with reprojection error <= threshold, ascending.
inline std::vector<std::size_t> inliers_of(const HomographyMatrix& h, std::span<const Correspondence> corrs,
                                           double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < corrs.size(); ++i)
    if (reprojection_error(h, corrs[i]) <= threshold) out.push_back(i);
  return out;
}

struct RansacResult {
  HomographyMatrix homography;
  std::vector<std::size_t> inliers;

  double inlier_ratio(std::size_t total) const noexcept {
    return total == 0 ? 0.0 : static_cast<double>(inliers.size()) / static_cast<double>(total);
  }
};

namespace detail {

struct Score {
  std::size_t count = 0;
  double mean_error = std::numeric_limits<double>::infinity();

  bool better_than(const Score& o) const noexcept {
    return count > o.count || (count == o.count && mean_error < o.mean_error);
  }
};

inline Score score_model(const HomographyMatrix& h, std::span<const Correspondence> corrs, double threshold) {
  Score s;
  double sum = 0.0;
  for (const auto& k : corrs) {
    const double e = reprojection_error(h, k);
    if (e <= threshold) {
      ++s.count;
      sum += e;
    }
  }
  if (s.count > 0) s.mean_error = sum / static_cast<double>(s.count);
  return s;
}

inline std::vector<Correspondence> select(std::span<const Correspondence> corrs, std::span<const std::size_t> idx) {
  std::vector<Correspondence> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(corrs[i]);
  return out;
}

}  // namespace detail

/// Seeded RANSAC over minimal 4-point DLT fits. The winning model is refit on its
/// inliers; the returned inlier set is recomputed exactly under the returned H.
inline RansacResult ransac_homography(std::span<const Correspondence> corrs, const VerifyParams& params) {
  constexpr int kMaxResamples = 100;
  const std::size_t n = corrs.size();
  if (n < 4) fail(ErrorCode::TooFewMatches, "RANSAC needs at least 4 correspondences, got " + std::to_string(n));

  std::mt19937_64 rng(params.rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  std::optional<HomographyMatrix> best;
  detail::Score best_score;
  std::array<Correspondence, 4> sample{};
  for (std::size_t it = 0; it < params.ransac_iterations; ++it) {
    for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
      std::array<std::size_t, 4> idx{};
      for (std::size_t k = 0; k < 4; ++k) {
        std::size_t cand;
        do {
          cand = pick(rng);
        } while (std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), cand) !=
                 idx.begin() + static_cast<std::ptrdiff_t>(k));
        idx[k] = cand;
        sample[k] = corrs[cand];
      }
      HomographyMatrix h;
      try {
        h = dlt_homography(sample);
      } catch (const Error&) {
        continue;
      }
      const auto s = detail::score_model(h, corrs, params.reproj_threshold);
      if (!best || s.better_than(best_score)) {
        best = h;
        best_score = s;
      }
      break;
    }
  }
  if (!best) fail(ErrorCode::NoValidModel, "every RANSAC sample was degenerate");

  RansacResult result{*best, inliers_of(*best, corrs, params.reproj_threshold)};
  // Refit on the consensus set; keep refits only while they do not lose support.
  for (int round = 0; round < 5 && result.inliers.size() >= 4; ++round) {
    HomographyMatrix refit;
    try {
      refit = dlt_homography(detail::select(corrs, result.inliers));
    } catch (const Error&) {
      break;
    }
    auto refit_inliers = inliers_of(refit, corrs, params.reproj_threshold);
    if (refit_inliers.size() < result.inliers.size()) break;
    const bool same = refit_inliers == result.inliers;
    result = {refit, std::move(refit_inliers)};
    if (same) break;
  }
  return result;
}

/// Maps the query rectangle's corners through H and shifts them by the
/// candidate's top-left corner in the target image.
inline Quad project_and_offset(const HomographyMatrix& h, double query_w, double query_h,
                               const Point2& candidate_origin) {
  const std::array<Point2, 4> src{Point2{0, 0}, Point2{query_w, 0}, Point2{query_w, query_h}, Point2{0, query_h}};
  Quad quad;
  for (std::size_t i = 0; i < 4; ++i) quad.corners[i] = apply_homography(h, src[i]) + candidate_origin;
  return quad;
}

struct VerifiedMatch {
  HomographyMatrix homography;
  Quad quad_target;
  BBox box_target;
  double inlier_ratio = 0.0;
  std::size_t match_count = 0;
  std::size_t candidate_index = 0;
};

enum class RejectReason { TooFewMatches, LowInlierRatio, DegenerateHomography, InvalidQuad };

inline constexpr std::string_view to_string(RejectReason r) noexcept {
  switch (r) {
    case RejectReason::TooFewMatches: return "TooFewMatches";
    case RejectReason::LowInlierRatio: return "LowInlierRatio";
    case RejectReason::DegenerateHomography: return "DegenerateHomography";
    case RejectReason::InvalidQuad: return "InvalidQuad";
  }
  return "Unknown";
}

struct Rejection {
  std::size_t candidate_index = 0;
  RejectReason reason = RejectReason::TooFewMatches;
  double inlier_ratio = 0.0;
  std::size_t match_count = 0;
};

using VerifyOutcome = std::variant<VerifiedMatch, Rejection>;

struct QuerySize {
  double width = 0.0;
  double height = 0.0;
};

/// Gates a candidate on match count and inlier ratio, then projects the query
/// corners into the target frame. `corrs` are in candidate-box coordinates.
inline VerifyOutcome verify_candidate(const QuerySize& query_size, const CandidateRegion& candidate,
                                      std::span<const Correspondence> corrs, const VerifyParams& params,
                                      double image_w, double image_h) {
  Rejection rej{candidate.index, RejectReason::TooFewMatches, 0.0, corrs.size()};
  if (corrs.size() < params.min_matches || corrs.size() < 4) return rej;

  RansacResult fit;
  try {
    fit = ransac_homography(corrs, params);
  } catch (const Error&) {
    rej.reason = RejectReason::DegenerateHomography;
    return rej;
  }
  rej.inlier_ratio = fit.inlier_ratio(corrs.size());
  if (rej.inlier_ratio < params.min_inlier_ratio) {
    rej.reason = RejectReason::LowInlierRatio;
    return rej;
  }

  Quad quad;
  try {
    quad = project_and_offset(fit.homography, query_size.width, query_size.height,
                              Point2{candidate.box.x_min, candidate.box.y_min});
  } catch (const Error&) {
    rej.reason = RejectReason::DegenerateHomography;
    return rej;
  }
  const BBox box = clip_box(quad.hull(), image_w, image_h);
  if (!quad.valid() || box.area() <= 0.0) {
    rej.reason = RejectReason::InvalidQuad;
    return rej;
  }
  return VerifiedMatch{fit.homography, quad, box, rej.inlier_ratio, corrs.size(), candidate.index};
}

}  // namespace ebod

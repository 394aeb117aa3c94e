#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ebod/error.hpp"
#include "ebod/geometry.hpp"

namespace ebod {

/// Dense feature grid over an image. Cell (i, j) covers pixels
/// [i*stride, (i+1)*stride) x [j*stride, (j+1)*stride); values are stored
/// row-major by cell, `dim` floats per cell.
struct FeatureMap {
  int grid_w = 0;
  int grid_h = 0;
  int dim = 0;
  int stride = 0;
  int image_w = 0;
  int image_h = 0;
  std::vector<float> values;

  bool empty() const noexcept { return grid_w <= 0 || grid_h <= 0 || dim <= 0; }

  std::span<const float> cell(int i, int j) const noexcept {
    const std::size_t off = (static_cast<std::size_t>(j) * grid_w + i) * dim;
    return {values.data() + off, static_cast<std::size_t>(dim)};
  }
  std::span<float> cell(int i, int j) noexcept {
    const std::size_t off = (static_cast<std::size_t>(j) * grid_w + i) * dim;
    return {values.data() + off, static_cast<std::size_t>(dim)};
  }

  /// Throws InvalidArgument describing the first violated invariant.
  void validate() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::InvalidArgument, "FeatureMap: " + what); };
    if (stride <= 0) bad("stride must be > 0");
    if (image_w <= 0 || image_h <= 0) bad("image size must be > 0");
    if (grid_w != (image_w + stride - 1) / stride) bad("grid_w != ceil(image_w / stride)");
    if (grid_h != (image_h + stride - 1) / stride) bad("grid_h != ceil(image_h / stride)");
    if (dim <= 0) bad("dim must be > 0");
    if (values.size() != static_cast<std::size_t>(grid_w) * grid_h * dim) bad("values size mismatch");
    for (float v : values)
      if (!std::isfinite(v)) bad("non-finite value");
  }
};

struct SimilarityPoint {
  double px = 0.0;
  double py = 0.0;
  double score = 0.0;

  Point2 point() const noexcept { return {px, py}; }
  friend bool operator==(const SimilarityPoint&, const SimilarityPoint&) = default;
};

struct CandidateParams {
  double sigma = 0.6;
  /// DBSCAN radius in pixels; unset means 2 x the target map's stride.
  std::optional<double> eps;
  std::size_t min_samples = 3;
  double merge_iou = 0.5;

  void validate() const {
    if (!(sigma > -1.0 && sigma < 1.0)) fail(ErrorCode::InvalidArgument, "sigma must be in (-1, 1)");
    if (eps && !(*eps > 0.0)) fail(ErrorCode::InvalidArgument, "eps must be > 0");
    if (min_samples < 1) fail(ErrorCode::InvalidArgument, "min_samples must be >= 1");
    if (!(merge_iou >= 0.0 && merge_iou <= 1.0)) {
      fail(ErrorCode::InvalidArgument, "merge_iou must be in [0, 1]");
    }
  }
};

struct CandidateRegion {
  BBox box;
  std::vector<SimilarityPoint> cluster_points;
  double mean_score = 0.0;
  std::size_t index = 0;
};

/// Feature of the cell holding the query image's center pixel.
inline std::vector<float> query_center_feature(const FeatureMap& query_map) {
  if (query_map.empty() || query_map.stride <= 0) fail(ErrorCode::EmptyFeatureMap, "query feature map is empty");
  const int ci = std::min(static_cast<int>(std::floor((query_map.image_w / 2.0) / query_map.stride)),
                          query_map.grid_w - 1);
  const int cj = std::min(static_cast<int>(std::floor((query_map.image_h / 2.0) / query_map.stride)),
                          query_map.grid_h - 1);
  const auto f = query_map.cell(ci, cj);
  return {f.begin(), f.end()};
}

/// Cells whose cosine similarity with `center` exceeds `sigma`, row-major.
inline std::vector<SimilarityPoint> similarity_points(std::span<const float> center,
                                                      const FeatureMap& target_map, double sigma) {
  if (static_cast<int>(center.size()) != target_map.dim) {
    fail(ErrorCode::DimensionMismatch, "query feature dim " + std::to_string(center.size()) +
                                           " != target dim " + std::to_string(target_map.dim));
  }
  double cnorm2 = 0.0;
  for (float v : center) cnorm2 += static_cast<double>(v) * v;
  if (!(cnorm2 > 0.0)) fail(ErrorCode::ZeroQueryFeature, "query center feature has zero norm");
  const double cnorm = std::sqrt(cnorm2);

  std::vector<SimilarityPoint> out;
  const double s = target_map.stride;
  for (int j = 0; j < target_map.grid_h; ++j) {
    for (int i = 0; i < target_map.grid_w; ++i) {
      const auto f = target_map.cell(i, j);
      double dot = 0.0;
      double fnorm2 = 0.0;
      for (std::size_t k = 0; k < f.size(); ++k) {
        dot += static_cast<double>(f[k]) * center[k];
        fnorm2 += static_cast<double>(f[k]) * f[k];
      }
      if (!(fnorm2 > 0.0)) continue;
      const double score = std::clamp(dot / (cnorm * std::sqrt(fnorm2)), -1.0, 1.0);
      if (score > sigma) {
        out.push_back({std::min((i + 0.5) * s, static_cast<double>(target_map.image_w)),
                       std::min((j + 0.5) * s, static_cast<double>(target_map.image_h)), score});
      }
    }
  }
  return out;
}

struct Clustering {
  /// Member indices per cluster, ascending. Clusters are ordered by their first core point.
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> noise;
};

namespace detail {

// Uniform bucket grid with cell size eps; neighbours of a point lie in the 3x3 block around it.
class NeighborGrid {
 public:
  NeighborGrid(std::span<const SimilarityPoint> points, double eps) : points_(points), eps_(eps) {
    for (std::size_t i = 0; i < points.size(); ++i) buckets_[key(bucket(points[i].px), bucket(points[i].py))].push_back(i);
  }

  std::vector<std::size_t> neighbors(std::size_t i) const {
    std::vector<std::size_t> out;
    const long bx = bucket(points_[i].px);
    const long by = bucket(points_[i].py);
    const double eps2 = eps_ * eps_;
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx) {
        const auto it = buckets_.find(key(bx + dx, by + dy));
        if (it == buckets_.end()) continue;
        for (std::size_t k : it->second) {
          const double ddx = points_[k].px - points_[i].px;
          const double ddy = points_[k].py - points_[i].py;
          if (ddx * ddx + ddy * ddy <= eps2) out.push_back(k);
        }
      }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  // Padded slightly past eps against rounding.
  long bucket(double v) const noexcept { return static_cast<long>(std::floor(v / (eps_ * (1.0 + 1e-6)))); }
  static long long key(long x, long y) noexcept {
    return (static_cast<long long>(x) << 32) ^ static_cast<long long>(static_cast<unsigned long>(y) & 0xffffffffUL);
  }

  std::span<const SimilarityPoint> points_;
  double eps_;
  std::unordered_map<long long, std::vector<std::size_t>> buckets_;
};

}  // namespace detail

/// Euclidean DBSCAN. A point is core when its closed eps-ball (itself included)
/// holds at least `min_samples` points. A border point joins the cluster of its
/// lowest-index core neighbour.
inline Clustering dbscan_cluster(std::span<const SimilarityPoint> points, double eps, std::size_t min_samples) {
  if (!(eps > 0.0)) fail(ErrorCode::InvalidArgument, "eps must be > 0");
  if (min_samples < 1) fail(ErrorCode::InvalidArgument, "min_samples must be >= 1");
  const std::size_t n = points.size();
  Clustering result;
  if (n == 0) return result;

  const detail::NeighborGrid grid(points, eps);
  std::vector<std::vector<std::size_t>> nbrs(n);
  std::vector<bool> core(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    nbrs[i] = grid.neighbors(i);
    core[i] = nbrs[i].size() >= min_samples;
  }

  constexpr long kUnset = -1;
  std::vector<long> label(n, kUnset);
  long next = 0;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!core[seed] || label[seed] != kUnset) continue;
    const long id = next++;
    std::vector<std::size_t> stack{seed};
    label[seed] = id;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      for (std::size_t q : nbrs[p]) {
        if (core[q] && label[q] == kUnset) {
          label[q] = id;
          stack.push_back(q);
        }
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    for (std::size_t q : nbrs[i]) {  // ascending, so the first core hit is the lowest index
      if (core[q]) {
        label[i] = label[q];
        break;
      }
    }
  }

  result.clusters.resize(static_cast<std::size_t>(next));
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] == kUnset) {
      result.noise.push_back(i);
    } else {
      result.clusters[static_cast<std::size_t>(label[i])].push_back(i);
    }
  }
  return result;
}

inline double mean_score(std::span<const SimilarityPoint> pts) noexcept {
  double s = 0.0;
  for (const auto& p : pts) s += p.score;
  return pts.empty() ? 0.0 : s / static_cast<double>(pts.size());
}

/// Cluster bounds expanded by half the query size per side, clipped, merged while
/// any pair overlaps above `merge_iou`, then sorted by descending mean score
/// (ties: ascending x_min). Clusters that vanish after clipping are dropped.
inline std::vector<CandidateRegion> clusters_to_candidates(const std::vector<std::vector<std::size_t>>& clusters,
                                                           std::span<const SimilarityPoint> points,
                                                           double query_w, double query_h, double image_w,
                                                           double image_h, double merge_iou) {
  std::vector<CandidateRegion> cands;
  for (const auto& members : clusters) {
    if (members.empty()) fail(ErrorCode::InvalidArgument, "empty cluster");
    CandidateRegion c;
    const auto& p0 = points[members.front()];
    BBox bounds{p0.px, p0.py, p0.px, p0.py};
    for (std::size_t idx : members) {
      const auto& p = points[idx];
      bounds = bbox_union(bounds, BBox{p.px, p.py, p.px, p.py});
      c.cluster_points.push_back(p);
    }
    try {
      c.box = expand_and_clip(bounds, query_w, query_h, image_w, image_h);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::EmptyAfterClip) continue;
      throw;
    }
    c.mean_score = mean_score(c.cluster_points);
    cands.push_back(std::move(c));
  }

  for (bool merged = true; merged;) {
    merged = false;
    for (std::size_t i = 0; i < cands.size() && !merged; ++i) {
      for (std::size_t j = i + 1; j < cands.size() && !merged; ++j) {
        if (bbox_iou(cands[i].box, cands[j].box) > merge_iou) {
          cands[i].box = bbox_union(cands[i].box, cands[j].box);
          cands[i].cluster_points.insert(cands[i].cluster_points.end(), cands[j].cluster_points.begin(),
                                         cands[j].cluster_points.end());
          cands[i].mean_score = mean_score(cands[i].cluster_points);
          cands.erase(cands.begin() + static_cast<std::ptrdiff_t>(j));
          merged = true;
        }
      }
    }
  }

  std::stable_sort(cands.begin(), cands.end(), [](const CandidateRegion& a, const CandidateRegion& b) {
    if (a.mean_score != b.mean_score) return a.mean_score > b.mean_score;
    return a.box.x_min < b.box.x_min;
  });
  for (std::size_t i = 0; i < cands.size(); ++i) cands[i].index = i;
  return cands;
}

/// Center-feature query, sigma thresholding, DBSCAN and box expansion in one call.
inline std::vector<CandidateRegion> generate_candidates(const FeatureMap& query_map, const FeatureMap& target_map,
                                                        const CandidateParams& params) {
  params.validate();
  query_map.validate();
  target_map.validate();
  const auto center = query_center_feature(query_map);
  const auto points = similarity_points(center, target_map, params.sigma);
  const double eps = params.eps.value_or(2.0 * target_map.stride);
  const auto clustering = dbscan_cluster(points, eps, params.min_samples);
  return clusters_to_candidates(clustering.clusters, points, query_map.image_w, query_map.image_h,
                                target_map.image_w, target_map.image_h, params.merge_iou);
}

}  // namespace ebod

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "ebod/error.hpp"

namespace ebod {

// Continuous pixel coordinates, origin at the top-left image corner, y down.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline bool is_finite(const Point2& p) noexcept { return std::isfinite(p.x) && std::isfinite(p.y); }

inline Point2 operator+(const Point2& a, const Point2& b) noexcept { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(const Point2& a, const Point2& b) noexcept { return {a.x - b.x, a.y - b.y}; }

inline double distance(const Point2& a, const Point2& b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

/// Axis-aligned box treated as a closed real interval on both axes.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }

  bool valid() const noexcept {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
  }

  bool contains(const Point2& p) const noexcept {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }

  bool contains(const BBox& other) const noexcept {
    return other.x_min >= x_min && other.y_min >= y_min && other.x_max <= x_max &&
           other.y_max <= y_max;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline BBox bbox_union(const BBox& a, const BBox& b) noexcept {
  return {std::min(a.x_min, b.x_min), std::min(a.y_min, b.y_min), std::max(a.x_max, b.x_max),
          std::max(a.y_max, b.y_max)};
}

/// Intersection of two boxes; the result has zero extent (not negative) when disjoint.
inline BBox bbox_intersection(const BBox& a, const BBox& b) noexcept {
  BBox r{std::max(a.x_min, b.x_min), std::max(a.y_min, b.y_min), std::min(a.x_max, b.x_max),
         std::min(a.y_max, b.y_max)};
  if (r.x_max < r.x_min) r.x_max = r.x_min;
  if (r.y_max < r.y_min) r.y_max = r.y_min;
  return r;
}

inline double bbox_iou(const BBox& a, const BBox& b) noexcept {
  const double area_a = a.area();
  const double area_b = b.area();
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double inter = bbox_intersection(a, b).area();
  if (inter <= 0.0) return 0.0;
  const double uni = area_a + area_b - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Grows a cluster's bounds by half the query size on each side.
inline BBox expand_box(const BBox& bounds, double query_w, double query_h) noexcept {
  return {bounds.x_min - query_w / 2.0, bounds.y_min - query_h / 2.0, bounds.x_max + query_w / 2.0,
          bounds.y_max + query_h / 2.0};
}

inline BBox clip_box(const BBox& box, double image_w, double image_h) noexcept {
  return bbox_intersection(box, BBox{0.0, 0.0, image_w, image_h});
}

/// expand_box followed by clipping to [0, image_w] x [0, image_h].
/// Throws EmptyAfterClip when nothing of positive area remains.
inline BBox expand_and_clip(const BBox& cluster_bounds, double query_w, double query_h,
                            double image_w, double image_h) {
  if (!(query_w >= 0.0) || !(query_h >= 0.0) || !(image_w > 0.0) || !(image_h > 0.0)) {
    fail(ErrorCode::InvalidArgument, "expand_and_clip: query size must be >= 0 and image size > 0");
  }
  const BBox clipped = clip_box(expand_box(cluster_bounds, query_w, query_h), image_w, image_h);
  if (clipped.area() <= 0.0) fail(ErrorCode::EmptyAfterClip, "expanded box lies outside the image");
  return clipped;
}

/// Integer pixel rectangle [x0, x1) x [y0, y1) used to cut crops out of an image.
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
  bool empty() const noexcept { return x1 <= x0 || y1 <= y0; }
};

/// Smallest pixel rectangle covering `box`, clipped to the image.
inline PixelRect covering_rect(const BBox& box, int image_w, int image_h) noexcept {
  PixelRect r{static_cast<int>(std::floor(box.x_min)), static_cast<int>(std::floor(box.y_min)),
              static_cast<int>(std::ceil(box.x_max)), static_cast<int>(std::ceil(box.y_max))};
  r.x0 = std::clamp(r.x0, 0, image_w);
  r.y0 = std::clamp(r.y0, 0, image_h);
  r.x1 = std::clamp(r.x1, r.x0, image_w);
  r.y1 = std::clamp(r.y1, r.y0, image_h);
  return r;
}

/// Image of a source rectangle. Corners are ordered top-left, top-right,
/// bottom-right, bottom-left of that rectangle.
struct Quad {
  std::array<Point2, 4> corners{};

  /// Twice the signed area (shoelace). Positive for the source rectangle's own
  /// corner order in y-down image coordinates.
  double signed_area2() const noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const Point2& a = corners[i];
      const Point2& b = corners[(i + 1) % 4];
      s += a.x * b.y - b.x * a.y;
    }
    return s;
  }

  /// Strictly convex with the same winding as the source rectangle.
  bool valid() const noexcept {
    for (const auto& c : corners) {
      if (!is_finite(c)) return false;
    }
    for (std::size_t i = 0; i < 4; ++i) {
      const Point2 e0 = corners[(i + 1) % 4] - corners[i];
      const Point2 e1 = corners[(i + 2) % 4] - corners[(i + 1) % 4];
      if (e0.x * e1.y - e0.y * e1.x <= 0.0) return false;
    }
    return signed_area2() > 0.0;
  }

  BBox hull() const noexcept {
    BBox b{corners[0].x, corners[0].y, corners[0].x, corners[0].y};
    for (const auto& c : corners) {
      b.x_min = std::min(b.x_min, c.x);
      b.y_min = std::min(b.y_min, c.y);
      b.x_max = std::max(b.x_max, c.x);
      b.y_max = std::max(b.y_max, c.y);
    }
    return b;
  }
};

/// 3x3 projective transform, row-major. Stored at unit Frobenius norm, then
/// rescaled so m[2][2] == 1 whenever that entry is safely non-zero.
class HomographyMatrix {
 public:
  using Storage = std::array<std::array<double, 3>, 3>;

  static constexpr double kMinDeterminant = 1e-8;

  HomographyMatrix() : m_{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}} {}

  explicit HomographyMatrix(const Storage& m) : m_(m) { normalize(); }

  static HomographyMatrix identity() { return HomographyMatrix(); }

  static HomographyMatrix translation(double tx, double ty) {
    return HomographyMatrix(Storage{{{1, 0, tx}, {0, 1, ty}, {0, 0, 1}}});
  }

  /// x' = s·R(theta)·x + t
  static HomographyMatrix similarity(double scale, double theta, double tx, double ty) {
    const double c = scale * std::cos(theta);
    const double s = scale * std::sin(theta);
    return HomographyMatrix(Storage{{{c, -s, tx}, {s, c, ty}, {0, 0, 1}}});
  }

  double operator()(int r, int c) const noexcept { return m_[r][c]; }
  const Storage& matrix() const noexcept { return m_; }

  double determinant() const noexcept { return det3(m_); }

  HomographyMatrix inverse() const {
    const Storage& a = m_;
    Storage inv{};
    inv[0][0] = a[1][1] * a[2][2] - a[1][2] * a[2][1];
    inv[0][1] = a[0][2] * a[2][1] - a[0][1] * a[2][2];
    inv[0][2] = a[0][1] * a[1][2] - a[0][2] * a[1][1];
    inv[1][0] = a[1][2] * a[2][0] - a[1][0] * a[2][2];
    inv[1][1] = a[0][0] * a[2][2] - a[0][2] * a[2][0];
    inv[1][2] = a[0][2] * a[1][0] - a[0][0] * a[1][2];
    inv[2][0] = a[1][0] * a[2][1] - a[1][1] * a[2][0];
    inv[2][1] = a[0][1] * a[2][0] - a[0][0] * a[2][1];
    inv[2][2] = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    // Adjugate; normalization drops the scale.
    return HomographyMatrix(inv);
  }

  /// Composition: (a * b)(p) == a(b(p)).
  friend HomographyMatrix operator*(const HomographyMatrix& a, const HomographyMatrix& b) {
    Storage r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r[i][j] += a.m_[i][k] * b.m_[k][j];
    return HomographyMatrix(r);
  }

  double max_abs_difference(const HomographyMatrix& other) const noexcept {
    double d = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) d = std::max(d, std::abs(m_[i][j] - other.m_[i][j]));
    return d;
  }

 private:
  static double det3(const Storage& a) noexcept {
    return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
           a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
           a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  }

  void normalize() {
    double norm2 = 0.0;
    for (const auto& row : m_)
      for (double v : row) {
        if (!std::isfinite(v)) fail(ErrorCode::DegenerateHomography, "non-finite homography entry");
        norm2 += v * v;
      }
    if (norm2 <= 0.0) fail(ErrorCode::DegenerateHomography, "zero homography");
    const double inv_norm = 1.0 / std::sqrt(norm2);
    for (auto& row : m_)
      for (double& v : row) v *= inv_norm;
    if (std::abs(m_[2][2]) > 1e-6) {
      const double s = 1.0 / m_[2][2];
      for (auto& row : m_)
        for (double& v : row) v *= s;
    }
    // Checked on the stored form.
    if (std::abs(det3(m_)) <= kMinDeterminant) {
      fail(ErrorCode::DegenerateHomography, "homography is not invertible");
    }
  }

  Storage m_;
};

/// p' = H·(x, y, 1) followed by perspective division.
inline Point2 apply_homography(const HomographyMatrix& h, const Point2& p) {
  const double u = h(0, 0) * p.x + h(0, 1) * p.y + h(0, 2);
  const double v = h(1, 0) * p.x + h(1, 1) * p.y + h(1, 2);
  const double w = h(2, 0) * p.x + h(2, 1) * p.y + h(2, 2);
  if (std::abs(w) <= 1e-9) fail(ErrorCode::DegeneratePoint, "point maps to infinity");
  return {u / w, v / w};
}

}  // namespace ebod

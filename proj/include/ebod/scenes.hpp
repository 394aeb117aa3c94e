#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ebod/geometry.hpp"
#include "ebod/image.hpp"

// Planted-transform fixtures for end-to-end checks with the synthetic backends.
namespace ebod::scenes {

/// Smooth-interpolated random lattice, one per color channel, evaluated at
/// continuous coordinates so warped copies can be rendered without resampling.
class ValueNoise {
 public:
  ValueNoise(double spacing, int cells_x, int cells_y, std::uint64_t seed)
      : spacing_(spacing), nx_(cells_x + 2), ny_(cells_y + 2), lattice_(static_cast<std::size_t>(nx_) * ny_ * 3) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : lattice_) v = u(rng);
  }

  double operator()(double x, double y, int channel) const noexcept {
    const double gx = std::clamp(x / spacing_, 0.0, nx_ - 1.000001);
    const double gy = std::clamp(y / spacing_, 0.0, ny_ - 1.000001);
    const int ix = static_cast<int>(gx);
    const int iy = static_cast<int>(gy);
    const double fx = smooth(gx - ix);
    const double fy = smooth(gy - iy);
    const double a = at(ix, iy, channel), b = at(ix + 1, iy, channel);
    const double c = at(ix, iy + 1, channel), d = at(ix + 1, iy + 1, channel);
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
  }

 private:
  static double smooth(double t) noexcept { return t * t * (3 - 2 * t); }
  double at(int ix, int iy, int c) const noexcept {
    return lattice_[(static_cast<std::size_t>(iy) * nx_ + ix) * 3 + static_cast<std::size_t>(c)];
  }

  double spacing_;
  int nx_;
  int ny_;
  std::vector<double> lattice_;
};

/// Values stay inside [30, 225] so no pixel ever equals a pure vocabulary color.
inline std::uint8_t to_byte(double v) noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 30.0, 225.0)));
}

/// Two-octave colored texture: coarse for cell features, fine for the matcher.
struct PatchTexture {
  int width = 96;
  int height = 96;
  double coarse_spacing = 72.0;
  double fine_spacing = 7.0;
  double coarse_amp = 85.0;
  double fine_amp = 15.0;
  /// Pure red border band in pixels; 0 means none.
  int red_frame = 0;
  std::uint64_t seed = 0;

  Rgb operator()(double u, double v) const {
    if (red_frame > 0 && (u < red_frame || v < red_frame || u > width - red_frame || v > height - red_frame)) {
      return {255, 0, 0};
    }
    if (!coarse_ || built_seed_ != seed) build();
    double ch[3];
    for (int c = 0; c < 3; ++c) ch[c] = 128.0 + coarse_amp * (*coarse_)(u, v, c) + fine_amp * (*fine_)(u, v, c);
    return {to_byte(ch[0]), to_byte(ch[1]), to_byte(ch[2])};
  }

  /// Axis-aligned rendering at pixel centers.
  Image render() const {
    Image img(width, height);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) img.set(x, y, (*this)(x + 0.5, y + 0.5));
    return img;
  }

 private:
  void build() const {
    coarse_ = ValueNoise(coarse_spacing, static_cast<int>(width / coarse_spacing) + 2,
                         static_cast<int>(height / coarse_spacing) + 2, seed * 2 + 1);
    fine_ = ValueNoise(fine_spacing, static_cast<int>(width / fine_spacing) + 2,
                       static_cast<int>(height / fine_spacing) + 2, seed * 2 + 2);
    built_seed_ = seed;
  }

  mutable std::optional<ValueNoise> coarse_;
  mutable std::optional<ValueNoise> fine_;
  mutable std::uint64_t built_seed_ = 0;
};

/// Fine-grained background noise, decorrelated from patch textures.
inline Image noise_background(int w, int h, std::uint64_t seed, double spacing = 3.0, double amp = 90.0) {
  const ValueNoise n(spacing, static_cast<int>(w / spacing) + 2, static_cast<int>(h / spacing) + 2, seed);
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.set(x, y, {to_byte(128 + amp * n(x + 0.5, y + 0.5, 0)), to_byte(128 + amp * n(x + 0.5, y + 0.5, 1)),
                     to_byte(128 + amp * n(x + 0.5, y + 0.5, 2))});
  return img;
}

/// Renders `patch` into `scene` under `h` (patch frame -> scene frame): every
/// scene pixel whose center maps back inside the patch takes the patch color there.
/// Returns the hull of the warped patch rectangle, clipped to the scene.
inline BBox plant_warped(Image& scene, const PatchTexture& patch, const HomographyMatrix& h) {
  const Quad quad{{apply_homography(h, {0, 0}), apply_homography(h, {double(patch.width), 0}),
                   apply_homography(h, {double(patch.width), double(patch.height)}),
                   apply_homography(h, {0, double(patch.height)})}};
  const BBox hull = clip_box(quad.hull(), scene.width(), scene.height());
  const PixelRect r = covering_rect(hull, scene.width(), scene.height());
  const HomographyMatrix inv = h.inverse();
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const Point2 p = apply_homography(inv, {x + 0.5, y + 0.5});
      if (p.x >= 0 && p.y >= 0 && p.x < patch.width && p.y < patch.height) scene.set(x, y, patch(p.x, p.y));
    }
  return hull;
}

/// Exact bounding box of the pixels `plant_warped` would write.
inline BBox planted_pixel_box(const Image& scene, const PatchTexture& patch, const HomographyMatrix& h) {
  const Quad quad{{apply_homography(h, {0, 0}), apply_homography(h, {double(patch.width), 0}),
                   apply_homography(h, {double(patch.width), double(patch.height)}),
                   apply_homography(h, {0, double(patch.height)})}};
  const PixelRect r = covering_rect(clip_box(quad.hull(), scene.width(), scene.height()), scene.width(), scene.height());
  const HomographyMatrix inv = h.inverse();
  BBox box{1e300, 1e300, -1e300, -1e300};
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const Point2 p = apply_homography(inv, {x + 0.5, y + 0.5});
      if (p.x >= 0 && p.y >= 0 && p.x < patch.width && p.y < patch.height) {
        box = bbox_union(box, BBox{double(x), double(y), x + 1.0, y + 1.0});
      }
    }
  return box;
}

struct WarpRange {
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_rotation_deg = 12.0;
};

/// Random similarity keeping the warped patch at least `margin` px inside the scene.
inline HomographyMatrix random_similarity(std::mt19937_64& rng, int patch_w, int patch_h, int scene_w, int scene_h,
                                          const WarpRange& range, double margin = 24.0) {
  std::uniform_real_distribution<double> scale(range.min_scale, range.max_scale);
  std::uniform_real_distribution<double> rot(-range.max_rotation_deg, range.max_rotation_deg);
  const double s = scale(rng);
  const double theta = rot(rng) * std::numbers::pi / 180.0;
  const auto base = HomographyMatrix::similarity(s, theta, 0, 0);
  const Quad q{{apply_homography(base, {0, 0}), apply_homography(base, {double(patch_w), 0}),
                apply_homography(base, {double(patch_w), double(patch_h)}), apply_homography(base, {0, double(patch_h)})}};
  const BBox hull = q.hull();
  std::uniform_real_distribution<double> tx(margin - hull.x_min, scene_w - margin - hull.x_max);
  std::uniform_real_distribution<double> ty(margin - hull.y_min, scene_h - margin - hull.y_max);
  return HomographyMatrix::similarity(s, theta, tx(rng), ty(rng));
}

/// A genuine pure-color rectangle the detector should keep finding.
inline PixelRect place_blob(std::mt19937_64& rng, int scene_w, int scene_h, const std::vector<BBox>& avoid) {
  std::uniform_int_distribution<int> size(18, 40);
  for (int attempt = 0; attempt < 200; ++attempt) {
    const int w = size(rng), h = size(rng);
    std::uniform_int_distribution<int> px(4, scene_w - w - 4), py(4, scene_h - h - 4);
    const PixelRect r{px(rng), py(rng), 0, 0};
    const PixelRect full{r.x0, r.y0, r.x0 + w, r.y0 + h};
    const BBox b{double(full.x0 - 8), double(full.y0 - 8), double(full.x1 + 8), double(full.y1 + 8)};
    if (std::none_of(avoid.begin(), avoid.end(), [&](const BBox& a) { return bbox_intersection(a, b).area() > 0; })) {
      return full;
    }
  }
  return {4, 4, 22, 22};
}

struct PlantedScene {
  /// Earlier view in which the exemplar was cut out.
  Image source_view;
  PixelRect exemplar_crop;
  /// New view that the pipeline runs on.
  Image target;
  HomographyMatrix truth_h;
  /// Pixel bounding box of the planted instance in `target`.
  BBox truth_box;
  std::vector<BBox> genuine_boxes;
  /// Tile-shuffled copy of the planted object that the detector also fires on.
  std::optional<BBox> look_alike_box;
  std::string text = "red";
};

struct SceneOptions {
  int scene_size = 512;
  int patch_size = 96;
  /// Texture octaves of the planted object; size, frame and seed are set per scene.
  PatchTexture texture{};
  WarpRange warp{};
  int genuine_blobs = 2;
  double min_center_contrast = 12.0;
};

/// Luma standard deviation of the 16x16 block holding the patch center.
inline double center_contrast(const PatchTexture& patch) {
  const int x0 = std::max(0, patch.width / 2 - patch.width / 2 % 16);
  const int y0 = std::max(0, patch.height / 2 - patch.height / 2 % 16);
  double sum = 0.0, sum2 = 0.0;
  for (int y = y0; y < y0 + 16; ++y)
    for (int x = x0; x < x0 + 16; ++x) {
      const Rgb c = patch(x + 0.5, y + 0.5);
      const double l = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;
      sum += l;
      sum2 += l * l;
    }
  const double mean = sum / 256.0;
  return std::sqrt(std::max(0.0, sum2 / 256.0 - mean * mean));
}

namespace detail {

inline PatchTexture planted_patch(std::uint64_t seed, const SceneOptions& opt, int red_frame) {
  PatchTexture patch = opt.texture;
  patch.width = patch.height = opt.patch_size;
  patch.red_frame = red_frame;
  patch.seed = seed + 1000;
  // Redraw textures whose center cell is nearly flat.
  while (center_contrast(patch) < opt.min_center_contrast) patch.seed += 7919;
  return patch;
}

inline PlantedScene build_scene(std::uint64_t seed, const SceneOptions& opt, int red_frame) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 17);
  const PatchTexture patch = planted_patch(seed, opt, red_frame);

  PlantedScene s;
  // Earlier view: the object axis-aligned in its own noise background.
  const int src_size = opt.patch_size + 64;
  s.source_view = noise_background(src_size, src_size, seed * 7 + 3);
  s.exemplar_crop = {32, 32, 32 + opt.patch_size, 32 + opt.patch_size};
  s.source_view.paste(patch.render(), 32, 32);

  s.target = noise_background(opt.scene_size, opt.scene_size, seed * 7 + 5);
  s.truth_h = random_similarity(rng, patch.width, patch.height, opt.scene_size, opt.scene_size, opt.warp);
  plant_warped(s.target, patch, s.truth_h);
  s.truth_box = planted_pixel_box(s.target, patch, s.truth_h);

  std::vector<BBox> avoid{s.truth_box};
  for (int i = 0; i < opt.genuine_blobs; ++i) {
    const PixelRect r = place_blob(rng, opt.scene_size, opt.scene_size, avoid);
    s.target.fill_rect(r, {255, 0, 0});
    const BBox b{double(r.x0), double(r.y0), double(r.x1), double(r.y1)};
    s.genuine_boxes.push_back(b);
    avoid.push_back(b);
  }
  return s;
}

}  // namespace detail

/// An object the detector cannot see (no pure colors), to be recovered from a
/// positive exemplar.
inline PlantedScene missed_detection_scene(std::uint64_t seed, const SceneOptions& opt = {}) {
  return detail::build_scene(seed, opt, 0);
}

/// A textured object ringed by a pure-red band: the "red" detector fires on it,
/// and a negative exemplar of it must suppress that detection.
inline PlantedScene false_positive_scene(std::uint64_t seed, const SceneOptions& opt = {}) {
  return detail::build_scene(seed, opt, 4);
}

/// Renders `patch` with every tile outside the central 3x3 block moved to
/// another such position (no tile stays put), then redraws the red frame.
/// Appearance matches the original; geometry agrees only on the center block.
inline Image shuffled_look_alike(const PatchTexture& patch, std::mt19937_64& rng, int tile = 16) {
  PatchTexture plain = patch;
  plain.red_frame = 0;
  const Image src = plain.render();
  const int tx = patch.width / tile, ty = patch.height / tile;
  const int cx = tx / 2, cy = ty / 2;
  std::vector<std::pair<int, int>> movable;
  for (int j = 0; j < ty; ++j)
    for (int i = 0; i < tx; ++i)
      if (std::abs(i - cx) > 1 || std::abs(j - cy) > 1) movable.push_back({i, j});
  auto dest = movable;
  auto fixed_point = [&] {
    for (std::size_t k = 0; k < movable.size(); ++k)
      if (dest[k] == movable[k]) return true;
    return false;
  };
  do {
    std::shuffle(dest.begin(), dest.end(), rng);
  } while (!movable.empty() && fixed_point());

  Image out = src;
  for (std::size_t k = 0; k < movable.size(); ++k) {
    const PixelRect from{movable[k].first * tile, movable[k].second * tile, (movable[k].first + 1) * tile,
                         (movable[k].second + 1) * tile};
    out.paste(src.crop(from), dest[k].first * tile, dest[k].second * tile);
  }
  const int f = patch.red_frame;
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      if (x + 0.5 < f || y + 0.5 < f || x + 0.5 > out.width() - f || y + 0.5 > out.height() - f) {
        out.set(x, y, {255, 0, 0});
      }
  return out;
}

/// The false-positive scene plus an axis-aligned, grid-aligned shuffled copy of
/// the distractor. The copy is a genuine detection: suppressing the distractor
/// must leave it alone.
inline PlantedScene look_alike_scene(std::uint64_t seed, const SceneOptions& opt = {}) {
  PlantedScene s = false_positive_scene(seed, opt);
  const PatchTexture patch = detail::planted_patch(seed, opt, 4);
  std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ULL + 29);
  const Image decoy = shuffled_look_alike(patch, rng);

  std::vector<BBox> avoid{s.truth_box};
  avoid.insert(avoid.end(), s.genuine_boxes.begin(), s.genuine_boxes.end());
  std::vector<PixelRect> slots;
  for (int y = 16; y + decoy.height() + 16 <= opt.scene_size; y += 16)
    for (int x = 16; x + decoy.width() + 16 <= opt.scene_size; x += 16) {
      const BBox b{x - 16.0, y - 16.0, x + decoy.width() + 16.0, y + decoy.height() + 16.0};
      if (std::none_of(avoid.begin(), avoid.end(), [&](const BBox& a) { return bbox_intersection(a, b).area() > 0; })) {
        slots.push_back({x, y, x + decoy.width(), y + decoy.height()});
      }
    }
  if (slots.empty()) return s;
  const PixelRect r = slots[std::uniform_int_distribution<std::size_t>(0, slots.size() - 1)(rng)];
  s.target.paste(decoy, r.x0, r.y0);
  s.look_alike_box = BBox{double(r.x0), double(r.y0), double(r.x1), double(r.y1)};
  return s;
}

/// Noise plus a handful of pure-color rectangles; no planted exemplar.
inline Image random_blob_scene(std::uint64_t seed, int size = 256) {
  std::mt19937_64 rng(seed);
  Image img = noise_background(size, size, seed + 99);
  std::uniform_int_distribution<int> count(0, 5);
  std::uniform_int_distribution<std::size_t> color(0, 2);
  const Rgb colors[] = {{255, 0, 0}, {0, 255, 0}, {0, 0, 255}};
  std::vector<BBox> placed;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const PixelRect r = place_blob(rng, size, size, placed);
    img.fill_rect(r, colors[color(rng)]);
    placed.push_back({double(r.x0), double(r.y0), double(r.x1), double(r.y1)});
  }
  return img;
}

}  // namespace ebod::scenes

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ebod/candidates.hpp"
#include "ebod/error.hpp"
#include "ebod/image.hpp"
#include "ebod/prompts.hpp"
#include "ebod/verification.hpp"

namespace ebod {

// ---------------------------------------------------------------------------
// Capability contracts. Implementations are immutable after construction and
// may be called concurrently.

/// Dense backbone features. Same image, same map.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual FeatureMap extract(const Image& image) const = 0;
};

/// Pairwise keypoint matching; `q` lies in the query, `c` in the crop.
class PairMatcher {
 public:
  virtual ~PairMatcher() = default;
  virtual std::vector<Correspondence> match(const Image& query, const Image& crop) const = 0;
};

struct DetectorOutput {
  /// Whether the prompts were consumed. When false the caller applies the fallback filter.
  bool supports_prompts = false;
  std::vector<Detection> detections;
};

/// Text-conditioned detector that may accept labeled box prompts.
class PromptableDetector {
 public:
  virtual ~PromptableDetector() = default;
  virtual DetectorOutput detect(const Image& image, const std::string& text,
                                std::span<const BoxPrompt> prompts) const = 0;
};

struct Backends {
  std::shared_ptr<const FeatureExtractor> features;
  std::shared_ptr<const PairMatcher> matcher;
  std::shared_ptr<const PromptableDetector> detector;
};

// ---------------------------------------------------------------------------
// Synthetic feature extractor

/// Fixed seeded dim x (3*stride^2) projection of each cell's raw RGB block
/// (zero-padded at the borders), L2-normalized. The matrix is a Gaussian
/// dim x 12 draw composed with 2x2 bin averaging and mean removal, so flat
/// blocks map to the zero vector.
class SyntheticFeatureExtractor final : public FeatureExtractor {
 public:
  static constexpr int kBins = 2;

  explicit SyntheticFeatureExtractor(int stride = 16, int dim = 32, std::uint64_t seed = 0)
      : stride_(stride), dim_(dim) {
    if (stride <= 0 || dim <= 0 || stride % kBins != 0) {
      fail(ErrorCode::InvalidArgument, "stride must be a positive even number, dim > 0");
    }
    constexpr int pooled = 3 * kBins * kBins;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> g(static_cast<std::size_t>(dim) * pooled);
    for (auto& w : g) w = gauss(rng);

    const int bin = stride / kBins;
    const double bin_area = static_cast<double>(bin) * bin;
    const std::size_t in = block_size();
    projection_.resize(static_cast<std::size_t>(dim) * in);
    for (int d = 0; d < dim; ++d) {
      const double* row = &g[static_cast<std::size_t>(d) * pooled];
      double mean = 0.0;
      for (int k = 0; k < pooled; ++k) mean += row[k];
      mean /= pooled;
      double* out = &projection_[static_cast<std::size_t>(d) * in];
      for (int y = 0; y < stride; ++y)
        for (int x = 0; x < stride; ++x)
          for (int c = 0; c < 3; ++c) {
            const int k = ((y / bin) * kBins + x / bin) * 3 + c;
            out[(static_cast<std::size_t>(y) * stride + x) * 3 + c] = (row[k] - mean) / bin_area;
          }
    }
  }

  int stride() const noexcept { return stride_; }
  int dim() const noexcept { return dim_; }

  /// Row-major dim x (3*stride^2); columns follow the block's interleaved RGB layout.
  std::span<const double> projection() const noexcept { return projection_; }

  FeatureMap extract(const Image& image) const override {
    if (image.empty()) fail(ErrorCode::InvalidArgument, "cannot extract features from an empty image");
    FeatureMap map;
    map.stride = stride_;
    map.dim = dim_;
    map.image_w = image.width();
    map.image_h = image.height();
    map.grid_w = (image.width() + stride_ - 1) / stride_;
    map.grid_h = (image.height() + stride_ - 1) / stride_;
    map.values.assign(static_cast<std::size_t>(map.grid_w) * map.grid_h * dim_, 0.0f);

    const std::size_t in = block_size();
    std::vector<double> block(in);
    std::vector<double> f(static_cast<std::size_t>(dim_));
    for (int j = 0; j < map.grid_h; ++j) {
      for (int i = 0; i < map.grid_w; ++i) {
        std::size_t k = 0;
        for (int y = 0; y < stride_; ++y)
          for (int x = 0; x < stride_; ++x) {
            const int px = i * stride_ + x;
            const int py = j * stride_ + y;
            const bool inside = px < image.width() && py < image.height();
            for (int c = 0; c < 3; ++c) block[k++] = inside ? image.channel(px, py, c) : 0.0;
          }

        double norm2 = 0.0;
        for (int d = 0; d < dim_; ++d) {
          const double* w = &projection_[static_cast<std::size_t>(d) * in];
          double acc = 0.0;
          for (std::size_t t = 0; t < in; ++t) acc += w[t] * block[t];
          f[static_cast<std::size_t>(d)] = acc;
          norm2 += acc * acc;
        }
        // Flat blocks are featureless.
        if (norm2 > 1e-12) {
          auto out = map.cell(i, j);
          const double inv = 1.0 / std::sqrt(norm2);
          for (int d = 0; d < dim_; ++d) out[static_cast<std::size_t>(d)] = static_cast<float>(f[static_cast<std::size_t>(d)] * inv);
        }
      }
    }
    return map;
  }

 private:
  std::size_t block_size() const noexcept { return static_cast<std::size_t>(3) * stride_ * stride_; }

  int stride_;
  int dim_;
  std::vector<double> projection_;
};

inline FeatureMap synthetic_extract_features(const Image& image, int stride = 16, int dim = 32,
                                             std::uint64_t seed = 0) {
  return SyntheticFeatureExtractor(stride, dim, seed).extract(image);
}

// ---------------------------------------------------------------------------
// NCC grid matcher

/// Exhaustive normalized cross-correlation of each textured query cell against
/// every placement in the crop (luma). The best placement becomes a
/// correspondence between cell centers when its correlation reaches `min_corr`.
class NccGridMatcher final : public PairMatcher {
 public:
  explicit NccGridMatcher(int cell = 16, double min_corr = 0.8) : cell_(cell), min_corr_(min_corr) {
    if (cell <= 0) fail(ErrorCode::InvalidArgument, "cell must be > 0");
  }

  std::vector<Correspondence> match(const Image& query, const Image& crop) const override {
    std::vector<Correspondence> out;
    const int n = cell_;
    if (query.width() < n || query.height() < n || crop.width() < n || crop.height() < n) return out;

    const auto q = to_gray(query);
    const auto c = to_gray(crop);
    const int cw = crop.width();
    const int ch = crop.height();

    // Integral images of the crop and its square, (cw+1) x (ch+1).
    std::vector<double> sum(static_cast<std::size_t>(cw + 1) * (ch + 1), 0.0);
    std::vector<double> sq(sum.size(), 0.0);
    auto at = [cw](int x, int y) { return static_cast<std::size_t>(y) * (cw + 1) + x; };
    for (int y = 0; y < ch; ++y) {
      double row = 0.0, row2 = 0.0;
      for (int x = 0; x < cw; ++x) {
        const double v = c[static_cast<std::size_t>(y) * cw + x];
        row += v;
        row2 += v * v;
        sum[at(x + 1, y + 1)] = sum[at(x + 1, y)] + row;
        sq[at(x + 1, y + 1)] = sq[at(x + 1, y)] + row2;
      }
    }
    const double count = static_cast<double>(n) * n;

    std::vector<double> tmpl(static_cast<std::size_t>(n) * n);
    for (int cy = 0; cy + n <= query.height(); cy += n) {
      for (int cx = 0; cx + n <= query.width(); cx += n) {
        double mean = 0.0;
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            const double v = q[static_cast<std::size_t>(cy + y) * query.width() + cx + x];
            tmpl[static_cast<std::size_t>(y) * n + x] = v;
            mean += v;
          }
        mean /= count;
        double tnorm2 = 0.0;
        for (double& v : tmpl) {
          v -= mean;
          tnorm2 += v * v;
        }
        if (tnorm2 <= 1e-9 * count) continue;  // flat cell
        const double tnorm = std::sqrt(tnorm2);

        double best = -2.0;
        int bx = 0, by = 0;
        for (int y = 0; y + n <= ch; ++y) {
          for (int x = 0; x + n <= cw; ++x) {
            const double s = sum[at(x + n, y + n)] - sum[at(x, y + n)] - sum[at(x + n, y)] + sum[at(x, y)];
            const double s2 = sq[at(x + n, y + n)] - sq[at(x, y + n)] - sq[at(x + n, y)] + sq[at(x, y)];
            const double wvar = s2 - s * s / count;
            if (wvar <= 1e-9 * count) continue;
            double num = 0.0;
            for (int ty = 0; ty < n; ++ty) {
              const double* crow = &c[static_cast<std::size_t>(y + ty) * cw + x];
              const double* trow = &tmpl[static_cast<std::size_t>(ty) * n];
              for (int tx = 0; tx < n; ++tx) num += trow[tx] * crow[tx];
            }
            const double corr = num / (tnorm * std::sqrt(wvar));
            if (corr > best) {
              best = corr;
              bx = x;
              by = y;
            }
          }
        }
        if (best >= min_corr_) {
          const double half = n / 2.0;
          out.push_back({Point2{cx + half, cy + half}, Point2{bx + half, by + half}, std::clamp(best, 0.0, 1.0)});
        }
      }
    }
    return out;
  }

 private:
  int cell_;
  double min_corr_;
};

inline std::vector<Correspondence> ncc_grid_match(const Image& query, const Image& crop, int cell = 16,
                                                  double min_corr = 0.8) {
  return NccGridMatcher(cell, min_corr).match(query, crop);
}

// ---------------------------------------------------------------------------
// Synthetic promptable detector

struct NamedColor {
  std::string_view name;
  Rgb rgb;
};

inline constexpr std::array<NamedColor, 8> kColorVocabulary{{
    {"red", {255, 0, 0}},
    {"green", {0, 255, 0}},
    {"blue", {0, 0, 255}},
    {"yellow", {255, 255, 0}},
    {"cyan", {0, 255, 255}},
    {"magenta", {255, 0, 255}},
    {"white", {255, 255, 255}},
    {"black", {0, 0, 0}},
}};

inline Rgb color_for_prompt(std::string_view text) {
  std::string key;
  for (char ch : text)
    if (!std::isspace(static_cast<unsigned char>(ch))) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  for (const auto& c : kColorVocabulary)
    if (c.name == key) return c.rgb;
  fail(ErrorCode::UnknownTextPrompt, "'" + std::string(text) + "' is not in the color vocabulary");
}

/// Bounding boxes of 8-connected components of pixels exactly equal to `color`
/// with at least `min_area` pixels, in raster order of their first pixel.
/// A component spanning pixel columns a..b yields x-extent [a, b + 1].
inline std::vector<BBox> color_blobs(const Image& image, Rgb color, std::size_t min_area) {
  const int w = image.width();
  const int h = image.height();
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(w) * h, 0);
  std::vector<BBox> boxes;
  std::vector<std::pair<int, int>> stack;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      const std::size_t i0 = static_cast<std::size_t>(y0) * w + x0;
      if (seen[i0] || image.at(x0, y0) != color) continue;
      seen[i0] = 1;
      stack.assign(1, {x0, y0});
      int xmin = x0, xmax = x0, ymin = y0, ymax = y0;
      std::size_t area = 0;
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        ++area;
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx;
            const int ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
            if (seen[ni] || image.at(nx, ny) != color) continue;
            seen[ni] = 1;
            stack.push_back({nx, ny});
          }
      }
      if (area >= min_area) {
        boxes.push_back({static_cast<double>(xmin), static_cast<double>(ymin), static_cast<double>(xmax + 1),
                         static_cast<double>(ymax + 1)});
      }
    }
  }
  return boxes;
}

/// Detects exact-color blobs named by the text prompt (fixed 8-color
/// vocabulary). With `honor_prompts` it applies true/false prompt semantics
/// itself; otherwise it ignores prompts and says so.
class SyntheticPromptDetector final : public PromptableDetector {
 public:
  explicit SyntheticPromptDetector(bool honor_prompts = true, std::size_t min_area = 16)
      : honor_prompts_(honor_prompts), min_area_(min_area) {}

  DetectorOutput detect(const Image& image, const std::string& text,
                        std::span<const BoxPrompt> prompts) const override {
    const Rgb color = color_for_prompt(text);
    std::vector<Detection> raw;
    for (const auto& b : color_blobs(image, color, min_area_)) raw.push_back({b, 1.0, DetectionSource::Detector});
    DetectorOutput out;
    out.supports_prompts = honor_prompts_;
    out.detections = honor_prompts_ ? fallback_post_filter(raw, prompts, 0.5) : std::move(raw);
    return out;
  }

 private:
  bool honor_prompts_;
  std::size_t min_area_;
};

inline std::vector<Detection> synthetic_prompt_detector(const Image& image, const std::string& text,
                                                        std::span<const BoxPrompt> prompts) {
  return SyntheticPromptDetector().detect(image, text, prompts).detections;
}

inline Backends synthetic_backends(std::uint64_t feature_seed = 0, bool detector_honors_prompts = true) {
  return {std::make_shared<SyntheticFeatureExtractor>(16, 32, feature_seed), std::make_shared<NccGridMatcher>(16, 0.8),
          std::make_shared<SyntheticPromptDetector>(detector_honors_prompts)};
}

}  // namespace ebod

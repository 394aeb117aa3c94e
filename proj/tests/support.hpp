#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ebod/backends.hpp"
#include "ebod/candidates.hpp"
#include "ebod/image.hpp"
#include "ebod/verification.hpp"

namespace ebod::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "ebod") {
    std::random_device rd;
    const auto base = std::filesystem::temp_directory_path();
    for (;;) {
      path_ = base / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
      if (std::filesystem::create_directory(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_text(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return {bytes.begin(), bytes.end()};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  write_file_bytes(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline Image random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.set(x, y, {static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng)),
                     static_cast<std::uint8_t>(byte(rng))});
  return img;
}

// ---------------------------------------------------------------------------
// DBSCAN reference: all-pairs neighbourhoods, union-find over core points.

struct Partition {
  std::set<std::set<std::size_t>> clusters;
  std::set<std::size_t> noise;

  friend bool operator==(const Partition&, const Partition&) = default;
};

inline Partition dbscan_reference(std::span<const SimilarityPoint> pts, double eps, std::size_t min_samples) {
  const std::size_t n = pts.size();
  auto near = [&](std::size_t a, std::size_t b) {
    const double dx = pts[a].px - pts[b].px, dy = pts[a].py - pts[b].py;
    return dx * dx + dy * dy <= eps * eps;
  };
  std::vector<bool> core(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) c += near(i, j) ? 1 : 0;
    core[i] = c >= min_samples;
  }
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (core[i] && core[j] && near(i, j)) parent[root(i)] = root(j);

  std::map<std::size_t, std::set<std::size_t>> groups;
  Partition out;
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) {
      groups[root(i)].insert(i);
      continue;
    }
    // Border points go to the lowest-index core neighbour's cluster.
    std::size_t owner = n;
    for (std::size_t j = 0; j < n && owner == n; ++j)
      if (core[j] && near(i, j)) owner = j;
    if (owner == n) {
      out.noise.insert(i);
    } else {
      groups[root(owner)].insert(i);
    }
  }
  for (auto& [r, members] : groups) out.clusters.insert(members);
  return out;
}

inline Partition to_partition(const Clustering& c) {
  Partition p;
  for (const auto& members : c.clusters) p.clusters.insert({members.begin(), members.end()});
  p.noise = {c.noise.begin(), c.noise.end()};
  return p;
}

// ---------------------------------------------------------------------------
// NCC reference: direct sums per placement, no integral images.

inline std::vector<Correspondence> ncc_reference(const Image& query, const Image& crop, int cell, double min_corr) {
  std::vector<Correspondence> out;
  const auto qg = to_gray(query);
  const auto cg = to_gray(crop);
  const int qw = query.width(), cw = crop.width(), ch = crop.height();
  if (cw < cell || ch < cell) return out;
  const double n = static_cast<double>(cell) * cell;
  for (int j = 0; j + cell <= query.height(); j += cell) {
    for (int i = 0; i + cell <= qw; i += cell) {
      double qm = 0.0;
      for (int y = 0; y < cell; ++y)
        for (int x = 0; x < cell; ++x) qm += qg[static_cast<std::size_t>(j + y) * qw + i + x];
      qm /= n;
      double qv = 0.0;
      for (int y = 0; y < cell; ++y)
        for (int x = 0; x < cell; ++x) {
          const double d = qg[static_cast<std::size_t>(j + y) * qw + i + x] - qm;
          qv += d * d;
        }
      if (qv <= 1e-9) continue;
      double best = -2.0;
      int bx = 0, by = 0;
      for (int v = 0; v + cell <= ch; ++v)
        for (int u = 0; u + cell <= cw; ++u) {
          double cm = 0.0;
          for (int y = 0; y < cell; ++y)
            for (int x = 0; x < cell; ++x) cm += cg[static_cast<std::size_t>(v + y) * cw + u + x];
          cm /= n;
          double cov = 0.0, cv = 0.0;
          for (int y = 0; y < cell; ++y)
            for (int x = 0; x < cell; ++x) {
              const double a = qg[static_cast<std::size_t>(j + y) * qw + i + x] - qm;
              const double b = cg[static_cast<std::size_t>(v + y) * cw + u + x] - cm;
              cov += a * b;
              cv += b * b;
            }
          if (cv <= 1e-9) continue;
          const double r = cov / std::sqrt(qv * cv);
          if (r > best + 1e-12) {
            best = r;
            bx = u;
            by = v;
          }
        }
      if (best >= min_corr) {
        out.push_back({{i + cell / 2.0, j + cell / 2.0}, {bx + cell / 2.0, by + cell / 2.0}, std::min(best, 1.0)});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Connected components of an exact-color mask by flood fill.

inline std::vector<BBox> blobs_reference(const Image& img, Rgb color, std::size_t min_area) {
  const int w = img.width(), h = img.height();
  std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
  std::vector<BBox> out;
  int next = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (label[static_cast<std::size_t>(y) * w + x] >= 0 || !(img.at(x, y) == color)) continue;
      std::vector<std::pair<int, int>> stack{{x, y}};
      label[static_cast<std::size_t>(y) * w + x] = next;
      std::size_t area = 0;
      int x0 = x, y0 = y, x1 = x, y1 = y;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        ++area;
        x0 = std::min(x0, cx), y0 = std::min(y0, cy), x1 = std::max(x1, cx), y1 = std::max(y1, cy);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            auto& l = label[static_cast<std::size_t>(ny) * w + nx];
            if (l < 0 && img.at(nx, ny) == color) {
              l = next;
              stack.push_back({nx, ny});
            }
          }
      }
      ++next;
      if (area >= min_area) out.push_back({double(x0), double(y0), x1 + 1.0, y1 + 1.0});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Random well-conditioned homography: a perturbed square with mild perspective.

inline HomographyMatrix random_homography(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double s = 0.7 + 0.6 * (u(rng) + 1.0) / 2.0;
  const double th = 0.5 * u(rng);
  HomographyMatrix::Storage m{{{s * std::cos(th) + 0.1 * u(rng), -s * std::sin(th) + 0.1 * u(rng), 100 * u(rng)},
                               {s * std::sin(th) + 0.1 * u(rng), s * std::cos(th) + 0.1 * u(rng), 100 * u(rng)},
                               {2e-4 * u(rng), 2e-4 * u(rng), 1.0}}};
  return HomographyMatrix(m);
}

}  // namespace ebod::test

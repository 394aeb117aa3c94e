#pragma once

#include <png.h>
#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ebod/error.hpp"
#include "ebod/geometry.hpp"

namespace ebod {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit interleaved RGB image, row-major.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height * 3) {
    if (width < 0 || height < 0) fail(ErrorCode::InvalidArgument, "negative image size");
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) set(x, y, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }

  Rgb at(int x, int y) const noexcept {
    const std::uint8_t* p = &data_[index(x, y)];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) noexcept {
    std::uint8_t* p = &data_[index(x, y)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
  std::uint8_t channel(int x, int y, int c) const noexcept { return data_[index(x, y) + c]; }

  std::span<const std::uint8_t> bytes() const noexcept { return data_; }
  std::span<std::uint8_t> bytes() noexcept { return data_; }

  Image crop(const PixelRect& r) const {
    if (r.x0 < 0 || r.y0 < 0 || r.x1 > width_ || r.y1 > height_ || r.empty()) {
      fail(ErrorCode::InvalidArgument, "crop rectangle outside image");
    }
    Image out(r.width(), r.height());
    for (int y = 0; y < r.height(); ++y) {
      std::memcpy(&out.data_[out.index(0, y)], &data_[index(r.x0, r.y0 + y)],
                  static_cast<std::size_t>(r.width()) * 3);
    }
    return out;
  }

  /// Copies `src` with its top-left corner at (x0, y0); out-of-bounds pixels are dropped.
  void paste(const Image& src, int x0, int y0) noexcept {
    for (int y = 0; y < src.height(); ++y)
      for (int x = 0; x < src.width(); ++x) {
        const int tx = x0 + x;
        const int ty = y0 + y;
        if (tx >= 0 && ty >= 0 && tx < width_ && ty < height_) set(tx, ty, src.at(x, y));
      }
  }

  void fill_rect(const PixelRect& r, Rgb c) noexcept {
    for (int y = std::max(0, r.y0); y < std::min(height_, r.y1); ++y)
      for (int x = std::max(0, r.x0); x < std::min(width_, r.x1); ++x) set(x, y, c);
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * 3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// ITU-R BT.601 luma as doubles, row-major.
inline std::vector<double> to_gray(const Image& img) {
  std::vector<double> g(static_cast<std::size_t>(img.width()) * img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const Rgb c = img.at(x, y);
      g[static_cast<std::size_t>(y) * img.width() + x] = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;
    }
  return g;
}

// ---------------------------------------------------------------------------
// PNG codec (libpng simplified API)

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.empty()) fail(ErrorCode::InvalidArgument, "cannot encode an empty image");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, img.bytes().data(), 0, nullptr)) {
    fail(ErrorCode::IoFailure, std::string("png encode: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, img.bytes().data(), 0, nullptr)) {
    fail(ErrorCode::IoFailure, std::string("png encode: ") + png.message);
  }
  out.resize(size);
  return out;
}

inline Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (bytes.empty() || !png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    fail(ErrorCode::ImageDecodeError, png.message[0] ? png.message : "not a PNG stream");
  }
  png.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, img.bytes().data(), 0, nullptr)) {
    png_image_free(&png);
    fail(ErrorCode::ImageDecodeError, png.message);
  }
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

/// Reads and decodes a PNG file; a missing or undecodable file is an ImageDecodeError.
inline Image load_png(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    fail(ErrorCode::ImageDecodeError, "no image file at " + path.string());
  }
  const auto bytes = read_file_bytes(path);
  try {
    return decode_png(bytes);
  } catch (const Error& e) {
    fail(ErrorCode::ImageDecodeError, path.string() + ": " + e.what());
  }
}

inline void save_png(const std::filesystem::path& path, const Image& img) {
  write_file_bytes(path, encode_png(img));
}

// ---------------------------------------------------------------------------
// Hashing and base64 (OpenSSL)

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr)) {
    fail(ErrorCode::IoFailure, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

/// Throws SchemaViolation on malformed input.
inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) fail(ErrorCode::SchemaViolation, "base64 length not a multiple of 4");
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) fail(ErrorCode::SchemaViolation, "invalid base64 payload");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

}  // namespace ebod

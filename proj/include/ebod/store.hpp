#pragma once

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ebod/error.hpp"
#include "ebod/image.hpp"
#include "ebod/prompts.hpp"

namespace ebod {

namespace fs = std::filesystem;
using Timestamp = std::chrono::sys_seconds;

/// RFC 3339 in UTC with second precision, e.g. 2026-10-15T08:30:00Z.
inline std::string format_rfc3339(Timestamp t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Accepts "Z" or a numeric offset; fractional seconds are truncated.
inline std::optional<Timestamp> parse_rfc3339(const std::string& s) {
  std::tm tm{};
  int consumed = 0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &tm.tm_year, &tm.tm_mon, &tm.tm_mday, &tm.tm_hour,
                  &tm.tm_min, &tm.tm_sec, &consumed) != 6) {
    return std::nullopt;
  }
  std::size_t pos = static_cast<std::size_t>(consumed);
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  long offset = 0;
  if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
    ++pos;
  } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
    int oh = 0, om = 0;
    if (std::sscanf(s.c_str() + pos + 1, "%2d:%2d", &oh, &om) != 2) return std::nullopt;
    offset = (oh * 3600L + om * 60L) * (s[pos] == '-' ? -1 : 1);
    pos += 6;
  } else {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const std::time_t t = timegm(&tm);
  return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::from_time_t(t)) -
         std::chrono::seconds(offset);
}

inline Timestamp now_seconds() {
  return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
}

struct Exemplar {
  std::string id;
  std::string image_path;  // relative to the store directory
  ExemplarLabel label = ExemplarLabel::Positive;
  std::optional<std::string> text_tag;
  std::string note;
  Timestamp created_at{};
  int crop_w = 0;
  int crop_h = 0;

  friend bool operator==(const Exemplar&, const Exemplar&) = default;
};

struct NewExemplar {
  /// Pixel rectangle [x0, x1) x [y0, y1) of the source image; unset stores the whole image.
  std::optional<PixelRect> crop;
  ExemplarLabel label = ExemplarLabel::Positive;
  std::optional<std::string> text_tag;
  std::string note;
  /// Defaults to the current time.
  std::optional<Timestamp> created_at;
};

/// Catalog of exemplar crops under one directory:
///   <store>/manifest.json      {version, exemplars:[...]}
///   <store>/images/<id>.png
/// The manifest is replaced by write-to-temp + rename, so readers never see a
/// partial file. One writer per directory.
class ExemplarStore {
 public:
  static constexpr int kFormatVersion = 1;
  static constexpr int kMinCropSide = 8;

  /// Creates an empty store (directory, images/, manifest) if none exists; opens it otherwise.
  static ExemplarStore init(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot create " + (dir / "images").string() + ": " + ec.message());
    if (!fs::exists(dir / "manifest.json")) {
      ExemplarStore s(dir);
      s.commit();
      return s;
    }
    return load(dir);
  }

  /// Parses and validates the manifest and checks every referenced image.
  static ExemplarStore load(const fs::path& dir) {
    const fs::path manifest = dir / "manifest.json";
    std::error_code ec;
    if (!fs::is_regular_file(manifest, ec)) fail(ErrorCode::ManifestMissing, manifest.string());

    const auto bytes = read_file_bytes(manifest);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::ManifestCorrupt, "byte " + std::to_string(e.byte) + " of " + manifest.string());
    }

    auto corrupt = [](const std::string& where) -> void { fail(ErrorCode::ManifestCorrupt, where); };
    if (!doc.is_object() || !doc.contains("version") || !doc["version"].is_number_integer()) corrupt("version");
    if (doc["version"].get<int>() != kFormatVersion) {
      corrupt("version " + std::to_string(doc["version"].get<int>()) + " is not supported");
    }
    if (!doc.contains("exemplars") || !doc["exemplars"].is_array()) corrupt("exemplars");

    ExemplarStore store(dir);
    std::set<std::string> ids;
    const auto& list = doc["exemplars"];
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& r = list[i];
      const std::string at = "exemplars[" + std::to_string(i) + "]";
      auto str = [&](const char* key) {
        if (!r.is_object() || !r.contains(key) || !r[key].is_string()) corrupt(at + "." + key);
        return r[key].get<std::string>();
      };
      auto integer = [&](const char* key) {
        if (!r.contains(key) || !r[key].is_number_integer()) corrupt(at + "." + key);
        return r[key].get<int>();
      };
      Exemplar e;
      e.id = str("id");
      e.image_path = str("image");
      const auto label = parse_label(str("label"));
      if (!label) corrupt(at + ".label");
      e.label = *label;
      if (!r.contains("text_tag")) corrupt(at + ".text_tag");
      if (r["text_tag"].is_string()) {
        e.text_tag = r["text_tag"].get<std::string>();
      } else if (!r["text_tag"].is_null()) {
        corrupt(at + ".text_tag");
      }
      e.note = str("note");
      const auto ts = parse_rfc3339(str("created_at"));
      if (!ts) corrupt(at + ".created_at");
      e.created_at = *ts;
      e.crop_w = integer("crop_w");
      e.crop_h = integer("crop_h");

      if (!ids.insert(e.id).second) fail(ErrorCode::DuplicateId, e.id);
      const fs::path img = dir / e.image_path;
      if (!fs::is_regular_file(img, ec)) fail(ErrorCode::MissingImage, e.id);
      Image decoded;
      try {
        decoded = load_png(img);
      } catch (const Error&) {
        fail(ErrorCode::MissingImage, e.id + " (image does not decode)");
      }
      if (decoded.width() != e.crop_w || decoded.height() != e.crop_h) {
        corrupt(at + ": crop size does not match image " + e.image_path);
      }
      store.records_.push_back(std::move(e));
    }
    return store;
  }

  const fs::path& dir() const noexcept { return dir_; }
  const std::vector<Exemplar>& exemplars() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

  const Exemplar* find(const std::string& id) const noexcept {
    const auto it = std::find_if(records_.begin(), records_.end(), [&](const Exemplar& e) { return e.id == id; });
    return it == records_.end() ? nullptr : &*it;
  }

  Image load_image(const Exemplar& e) const { return load_png(dir_ / e.image_path); }

  /// Crops, writes images/<id>.png and commits the manifest. The id is the
  /// first 16 hex digits of the PNG's SHA-256.
  Exemplar add(const Image& source, const NewExemplar& req) {
    if (source.empty()) fail(ErrorCode::ImageDecodeError, "source image is empty");
    const PixelRect rect = req.crop.value_or(PixelRect{0, 0, source.width(), source.height()});
    if (rect.x0 < 0 || rect.y0 < 0 || rect.x1 > source.width() || rect.y1 > source.height() || rect.empty()) {
      fail(ErrorCode::CropOutOfBounds, "crop (" + std::to_string(rect.x0) + "," + std::to_string(rect.y0) + "," +
                                           std::to_string(rect.x1) + "," + std::to_string(rect.y1) +
                                           ") is not inside the " + std::to_string(source.width()) + "x" +
                                           std::to_string(source.height()) + " image");
    }
    if (rect.width() < kMinCropSide || rect.height() < kMinCropSide) {
      fail(ErrorCode::CropTooSmall, std::to_string(rect.width()) + "x" + std::to_string(rect.height()) +
                                        " is below the " + std::to_string(kMinCropSide) + " px minimum side");
    }
    const Image crop = source.crop(rect);
    const auto png = encode_png(crop);

    Exemplar e;
    e.id = sha256_hex(png).substr(0, 16);
    if (find(e.id)) fail(ErrorCode::DuplicateId, e.id);
    e.image_path = "images/" + e.id + ".png";
    e.label = req.label;
    e.text_tag = req.text_tag;
    e.note = req.note;
    e.created_at = req.created_at.value_or(now_seconds());
    e.crop_w = crop.width();
    e.crop_h = crop.height();

    std::error_code ec;
    fs::create_directories(dir_ / "images", ec);
    const fs::path final_path = dir_ / e.image_path;
    const fs::path tmp_path = final_path.string() + ".tmp";
    write_file_bytes(tmp_path, png);
    fs::rename(tmp_path, final_path, ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot place " + final_path.string() + ": " + ec.message());

    records_.push_back(e);
    try {
      commit();
    } catch (...) {
      records_.pop_back();
      throw;
    }
    return e;
  }

  /// Drops the record from the manifest, then deletes its image.
  void remove(const std::string& id) {
    const auto it = std::find_if(records_.begin(), records_.end(), [&](const Exemplar& e) { return e.id == id; });
    if (it == records_.end()) fail(ErrorCode::UnknownId, id);
    const Exemplar removed = *it;
    const auto pos = records_.erase(it);
    try {
      commit();
    } catch (...) {
      records_.insert(pos, removed);
      throw;
    }
    std::error_code ec;
    fs::remove(dir_ / removed.image_path, ec);
  }

  /// Records ordered by created_at, then id.
  std::vector<Exemplar> listing() const {
    auto out = records_;
    std::stable_sort(out.begin(), out.end(), [](const Exemplar& a, const Exemplar& b) {
      if (a.created_at != b.created_at) return a.created_at < b.created_at;
      return a.id < b.id;
    });
    return out;
  }

  static nlohmann::ordered_json to_json(const Exemplar& e) {
    nlohmann::ordered_json r;
    r["id"] = e.id;
    r["image"] = e.image_path;
    r["label"] = std::string(to_string(e.label));
    r["text_tag"] = e.text_tag ? nlohmann::ordered_json(*e.text_tag) : nlohmann::ordered_json(nullptr);
    r["note"] = e.note;
    r["created_at"] = format_rfc3339(e.created_at);
    r["crop_w"] = e.crop_w;
    r["crop_h"] = e.crop_h;
    return r;
  }

  /// Test seam: runs after the temporary manifest is written and before it is renamed into place.
  void set_commit_hook(std::function<void(const fs::path&)> hook) { commit_hook_ = std::move(hook); }

 private:
  explicit ExemplarStore(fs::path dir) : dir_(std::move(dir)) {}

  void commit() {
    nlohmann::ordered_json doc;
    doc["version"] = kFormatVersion;
    doc["exemplars"] = nlohmann::ordered_json::array();
    for (const auto& e : records_) doc["exemplars"].push_back(to_json(e));
    const std::string text = doc.dump(2) + "\n";

    const fs::path manifest = dir_ / "manifest.json";
    const fs::path tmp = dir_ / "manifest.json.tmp";
    write_file_bytes(tmp, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    if (commit_hook_) commit_hook_(tmp);
    std::error_code ec;
    fs::rename(tmp, manifest, ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot replace " + manifest.string() + ": " + ec.message());
  }

  fs::path dir_;
  std::vector<Exemplar> records_;
  std::function<void(const fs::path&)> commit_hook_;
};

inline ExemplarStore load_store(const fs::path& dir) { return ExemplarStore::load(dir); }

/// Adds one exemplar, creating the store when needed.
inline Exemplar add_exemplar(const fs::path& store_dir, const Image& source, const NewExemplar& req) {
  auto store = ExemplarStore::init(store_dir);
  return store.add(source, req);
}

}  // namespace ebod

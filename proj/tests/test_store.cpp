#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include "ebod/store.hpp"
#include "support.hpp"

using namespace ebod;

namespace {

NewExemplar req(std::optional<PixelRect> crop, ExemplarLabel label = ExemplarLabel::Positive, long long t = 1700000000) {
  NewExemplar r;
  r.crop = crop;
  r.label = label;
  r.created_at = Timestamp(std::chrono::seconds(t));
  return r;
}

void expect_code(const std::function<void()>& f, ErrorCode code, const std::string& fragment = {}) {
  try {
    f();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
    if (!fragment.empty()) EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Rfc3339, RoundTrip) {
  const Timestamp t(std::chrono::seconds(1700000123));
  EXPECT_EQ(format_rfc3339(t), "2023-11-14T22:15:23Z");
  EXPECT_EQ(parse_rfc3339("2023-11-14T22:15:23Z"), t);
  EXPECT_EQ(parse_rfc3339("2023-11-14T23:15:23+01:00"), t);
  EXPECT_EQ(parse_rfc3339("2023-11-14T22:15:23.75Z"), t);
  EXPECT_EQ(parse_rfc3339("2023-11-14 22:15"), std::nullopt);
}

TEST(Store, FreshStoreIsEmpty) {
  test::TempDir dir;
  ExemplarStore::init(dir / "s");
  EXPECT_EQ(load_store(dir / "s").size(), 0u);
}

TEST(Store, AddCropArithmetic) {
  test::TempDir dir;
  auto store = ExemplarStore::init(dir / "s");
  const Image src = test::random_image(256, 256, 1);
  // (10,10,74,74) as corners gives a 64x64 crop.
  const auto e = store.add(src, req(PixelRect{10, 10, 74, 74}));
  EXPECT_EQ(e.crop_w, 64);
  EXPECT_EQ(e.crop_h, 64);
  EXPECT_EQ(store.size(), 1u);
  EXPECT_EQ(e.id.size(), 16u);
  EXPECT_EQ(store.load_image(e).bytes().size(), 64u * 64u * 3u);
  EXPECT_EQ(load_store(dir / "s").size(), 1u);
}

TEST(Store, NoCropStoresWholeImage) {
  test::TempDir dir;
  const Image src = test::random_image(40, 30, 2);
  const auto e = add_exemplar(dir / "s", src, req(std::nullopt));
  EXPECT_EQ(e.crop_w, 40);
  EXPECT_EQ(e.crop_h, 30);
  const auto back = load_store(dir / "s");
  EXPECT_EQ(back.load_image(back.exemplars()[0]).bytes().size(), src.bytes().size());
  EXPECT_TRUE(std::equal(src.bytes().begin(), src.bytes().end(), back.load_image(back.exemplars()[0]).bytes().begin()));
}

TEST(Store, CropOutOfBounds) {
  test::TempDir dir;
  auto store = ExemplarStore::init(dir / "s");
  expect_code([&] { store.add(test::random_image(64, 64, 3), req(PixelRect{-5, 0, 10, 10})); },
              ErrorCode::CropOutOfBounds);
  expect_code([&] { store.add(test::random_image(64, 64, 3), req(PixelRect{0, 0, 65, 10})); },
              ErrorCode::CropOutOfBounds);
  expect_code([&] { store.add(test::random_image(64, 64, 3), req(PixelRect{10, 10, 10, 20})); },
              ErrorCode::CropOutOfBounds);
  EXPECT_EQ(load_store(dir / "s").size(), 0u);
}

TEST(Store, CropTooSmall) {
  test::TempDir dir;
  auto store = ExemplarStore::init(dir / "s");
  expect_code([&] { store.add(test::random_image(64, 64, 4), req(PixelRect{0, 0, 7, 20})); }, ErrorCode::CropTooSmall);
  EXPECT_NO_THROW(store.add(test::random_image(64, 64, 4), req(PixelRect{0, 0, 8, 8})));
}

TEST(Store, DuplicateContentIsDuplicateId) {
  test::TempDir dir;
  auto store = ExemplarStore::init(dir / "s");
  const Image src = test::random_image(64, 64, 5);
  const auto e = store.add(src, req(PixelRect{0, 0, 32, 32}));
  expect_code([&] { store.add(src, req(PixelRect{0, 0, 32, 32})); }, ErrorCode::DuplicateId, e.id);
  EXPECT_EQ(load_store(dir / "s").size(), 1u);
}

TEST(Store, RoundTripThreeRecordsFieldForField) {
  test::TempDir dir;
  auto store = ExemplarStore::init(dir / "s");
  NewExemplar a = req(PixelRect{0, 0, 32, 32}, ExemplarLabel::Positive, 1700000000);
  a.text_tag = "red";
  a.note = "missed on \"cam 3\"\nsecond line";
  NewExemplar b = req(PixelRect{10, 5, 50, 40}, ExemplarLabel::Negative, 1700000001);
  NewExemplar c = req(std::nullopt, ExemplarLabel::Negative, 1600000000);
  c.note = "unicode: caf\xc3\xa9";
  std::vector<Exemplar> added{store.add(test::random_image(64, 64, 6), a), store.add(test::random_image(64, 64, 7), b),
                              store.add(test::random_image(20, 20, 8), c)};
  const auto back = load_store(dir / "s");
  EXPECT_EQ(back.exemplars(), added);
  EXPECT_EQ(back.exemplars()[0].text_tag, std::optional<std::string>("red"));
  EXPECT_EQ(back.exemplars()[1].text_tag, std::nullopt);
}

TEST(Store, ManifestLayoutKeysInOrder) {
  test::TempDir dir;
  add_exemplar(dir / "s", test::random_image(16, 16, 9), req(std::nullopt));
  const auto doc = nlohmann::ordered_json::parse(test::read_text(dir / "s" / "manifest.json"));
  EXPECT_EQ(doc.begin().key(), "version");
  EXPECT_EQ(doc["version"], 1);
  std::vector<std::string> keys;
  for (const auto& [k, v] : doc["exemplars"][0].items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"id", "image", "label", "text_tag", "note", "created_at", "crop_w",
                                            "crop_h"}));
  EXPECT_EQ(doc["exemplars"][0]["label"], "positive");
  EXPECT_EQ(doc["exemplars"][0]["created_at"], "2023-11-14T22:13:20Z");
}

TEST(Store, ListingOrderedByTimeThenId) {
  test::TempDir dir;
  auto store = ExemplarStore::init(dir / "s");
  store.add(test::random_image(16, 16, 10), req(std::nullopt, ExemplarLabel::Positive, 300));
  store.add(test::random_image(16, 16, 11), req(std::nullopt, ExemplarLabel::Positive, 100));
  store.add(test::random_image(16, 16, 12), req(std::nullopt, ExemplarLabel::Positive, 100));
  const auto l = store.listing();
  ASSERT_EQ(l.size(), 3u);
  EXPECT_EQ(l[0].created_at, l[1].created_at);
  EXPECT_LT(l[0].id, l[1].id);
  EXPECT_EQ(l[2].created_at.time_since_epoch(), std::chrono::seconds(300));
}

TEST(Store, RemoveDropsRecordAndImage) {
  test::TempDir dir;
  auto store = ExemplarStore::init(dir / "s");
  const auto e = store.add(test::random_image(16, 16, 13), req(std::nullopt));
  store.remove(e.id);
  EXPECT_FALSE(std::filesystem::exists(dir / "s" / e.image_path));
  EXPECT_EQ(load_store(dir / "s").size(), 0u);
  expect_code([&] { store.remove(e.id); }, ErrorCode::UnknownId, e.id);
}

TEST(Store, MissingManifest) {
  test::TempDir dir;
  expect_code([&] { load_store(dir.path()); }, ErrorCode::ManifestMissing);
}

TEST(Store, CorruptManifestNamesPosition) {
  test::TempDir dir;
  ExemplarStore::init(dir / "s");
  test::write_text(dir / "s" / "manifest.json", "{\"version\": 1, \"exemplars\": [");
  expect_code([&] { load_store(dir / "s"); }, ErrorCode::ManifestCorrupt, "byte");
  test::write_text(dir / "s" / "manifest.json", "{\"version\": 2, \"exemplars\": []}");
  expect_code([&] { load_store(dir / "s"); }, ErrorCode::ManifestCorrupt, "version");
  test::write_text(dir / "s" / "manifest.json",
                   "{\"version\": 1, \"exemplars\": [{\"id\": \"x\", \"image\": \"images/x.png\", \"label\": \"maybe\"}]}");
  expect_code([&] { load_store(dir / "s"); }, ErrorCode::ManifestCorrupt, "exemplars[0].label");
}

TEST(Store, DeletedImageIsMissingImage) {
  test::TempDir dir;
  const auto e = add_exemplar(dir / "s", test::random_image(16, 16, 14), req(std::nullopt));
  std::filesystem::remove(dir / "s" / e.image_path);
  expect_code([&] { load_store(dir / "s"); }, ErrorCode::MissingImage, e.id);
}

TEST(Store, UndecodableImageIsMissingImage) {
  test::TempDir dir;
  const auto e = add_exemplar(dir / "s", test::random_image(16, 16, 15), req(std::nullopt));
  test::write_text(dir / "s" / e.image_path, "not a png");
  expect_code([&] { load_store(dir / "s"); }, ErrorCode::MissingImage, e.id);
}

TEST(Store, DuplicateIdInManifest) {
  test::TempDir dir;
  const auto e = add_exemplar(dir / "s", test::random_image(16, 16, 16), req(std::nullopt));
  auto doc = nlohmann::ordered_json::parse(test::read_text(dir / "s" / "manifest.json"));
  doc["exemplars"].push_back(doc["exemplars"][0]);
  test::write_text(dir / "s" / "manifest.json", doc.dump(2));
  expect_code([&] { load_store(dir / "s"); }, ErrorCode::DuplicateId, e.id);
}

TEST(Store, ContentHashStableAcrossLoads) {
  test::TempDir dir;
  const auto e = add_exemplar(dir / "s", test::random_image(48, 48, 17), req(PixelRect{4, 4, 40, 40}));
  const auto path = dir / "s" / e.image_path;
  const auto before = sha256_hex(read_file_bytes(path));
  EXPECT_EQ(before.substr(0, 16), e.id);
  for (int i = 0; i < 3; ++i) {
    auto s = load_store(dir / "s");
    s.load_image(s.exemplars()[0]);
    s.add(test::random_image(16, 16, 100 + static_cast<std::uint64_t>(i)), req(std::nullopt));
  }
  EXPECT_EQ(sha256_hex(read_file_bytes(path)), before);
}

TEST(Store, KilledBetweenTempWriteAndRenameLeavesPreviousManifest) {
  test::TempDir dir;
  auto store = ExemplarStore::init(dir / "s");
  store.add(test::random_image(16, 16, 18), req(std::nullopt));
  const std::string before = test::read_text(dir / "s" / "manifest.json");

  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    store.set_commit_hook([](const std::filesystem::path&) { _exit(42); });
    store.add(test::random_image(16, 16, 19), req(std::nullopt));
    _exit(0);
  }
  int status = 0;
  waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 42);

  EXPECT_EQ(test::read_text(dir / "s" / "manifest.json"), before);
  EXPECT_TRUE(std::filesystem::exists(dir / "s" / "manifest.json.tmp"));
  const auto back = load_store(dir / "s");
  EXPECT_EQ(back.size(), 1u);
  // The next writer simply overwrites the stale temp file.
  auto again = load_store(dir / "s");
  again.add(test::random_image(16, 16, 20), req(std::nullopt));
  EXPECT_EQ(load_store(dir / "s").size(), 2u);
}

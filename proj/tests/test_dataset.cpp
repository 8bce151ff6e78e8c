#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "cxrnet/dataset.hpp"
#include "test_support.hpp"

using testing_support::TempDir;

namespace {

cxr::DatasetManifest synthetic_manifest(std::size_t n0, std::size_t n1, std::size_t n2) {
  std::vector<cxr::ManifestEntry> entries;
  const std::array<std::size_t, 3> counts{n0, n1, n2};
  for (std::size_t label = 0; label < 3; ++label)
    for (std::size_t i = 0; i < counts[label]; ++i)
      entries.push_back({cxr::class_names()[label] + "/img_" + std::to_string(i) + ".png", label});
  return cxr::DatasetManifest(std::move(entries));
}

std::set<std::string> paths(const cxr::DatasetManifest& m) {
  std::set<std::string> out;
  for (const auto& e : m.entries()) out.insert(e.path);
  return out;
}

cxr::DatasetError::Kind dataset_error_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const cxr::DatasetError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected DatasetError";
  return cxr::DatasetError::Kind::io;
}

}  // namespace

TEST(Scan, CountsSkipsAndWarns) {
  TempDir dir;
  cxr::Rng rng(1);
  const std::array<std::size_t, 3> counts{2, 3, 1};
  for (std::size_t label = 0; label < 3; ++label)
    for (std::size_t i = 0; i < counts[label]; ++i)
      testing_support::write_bytes(dir.path() / cxr::class_names()[label] / ("f" + std::to_string(i) + ".png"),
                                   cxr::encode_png(testing_support::pattern_image(label, 8, rng)));
  testing_support::write_bytes(dir.path() / "normal" / "upper.JPG",
                               cxr::encode_jpeg(testing_support::pattern_image(0, 8, rng)));
  testing_support::write_text(dir.path() / "normal" / "x.txt", "not an image");

  const auto m = cxr::scan_directory(dir.path());
  EXPECT_EQ(m.class_counts(), (std::array<std::size_t, 3>{3, 3, 1}));
  ASSERT_EQ(m.warnings().size(), 1u);
  EXPECT_NE(m.warnings()[0].find("x.txt"), std::string::npos);
  EXPECT_TRUE(std::is_sorted(m.entries().begin(), m.entries().end(),
                             [](const auto& a, const auto& b) { return a.path < b.path; }));
  EXPECT_EQ(m.of_class(2).front().path, "covid19_pneumonia/f0.png");
}

TEST(Scan, MissingAndEmptyClassDirectories) {
  TempDir dir;
  cxr::Rng rng(2);
  for (std::size_t label = 0; label < 2; ++label)
    testing_support::write_bytes(dir.path() / cxr::class_names()[label] / "a.png",
                                 cxr::encode_png(testing_support::pattern_image(label, 8, rng)));
  EXPECT_EQ(dataset_error_kind([&] { cxr::scan_directory(dir.path()); }),
            cxr::DatasetError::Kind::missing_class_directory);
  std::filesystem::create_directories(dir.path() / "covid19_pneumonia");
  EXPECT_EQ(dataset_error_kind([&] { cxr::scan_directory(dir.path()); }), cxr::DatasetError::Kind::empty_class);
}

TEST(Manifest, RejectsDuplicatesAndBadLabels) {
  EXPECT_EQ(dataset_error_kind([] { cxr::DatasetManifest({{"a.png", 0}, {"a.png", 1}}); }),
            cxr::DatasetError::Kind::duplicate_path);
  EXPECT_EQ(dataset_error_kind([] { cxr::DatasetManifest({{"a.png", 3}}); }), cxr::DatasetError::Kind::bad_manifest);
}

TEST(Manifest, FileRoundTrip) {
  TempDir dir;
  const auto m = synthetic_manifest(3, 2, 4);
  cxr::write_manifest(m, dir.path() / "m.tsv");
  const auto back = cxr::read_manifest(dir.path() / "m.tsv");
  EXPECT_EQ(back.entries(), m.entries());
  testing_support::write_text(dir.path() / "bad.tsv", "0\tfine.png\nnot a line\n");
  EXPECT_EQ(dataset_error_kind([&] { cxr::read_manifest(dir.path() / "bad.tsv"); }),
            cxr::DatasetError::Kind::bad_manifest);
}

TEST(Balance, UndersamplesToSmallestClass) {
  const auto m = synthetic_manifest(10860, 4494, 4152);
  const auto b = cxr::balance_classes(m, 7);
  EXPECT_EQ(b.class_counts(), (std::array<std::size_t, 3>{4152, 4152, 4152}));
  const auto all = paths(m);
  for (const auto& p : paths(b)) EXPECT_TRUE(all.count(p));
  EXPECT_EQ(paths(b), paths(cxr::balance_classes(m, 7)));
  EXPECT_NE(paths(b), paths(cxr::balance_classes(m, 8)));
  // the smallest class is kept whole
  const auto kept = paths(b);
  for (const auto& e : m.of_class(2)) EXPECT_TRUE(kept.count(e.path));
}

TEST(Balance, EqualCountsKeepMembership) {
  const auto m = synthetic_manifest(5, 5, 5);
  EXPECT_EQ(paths(cxr::balance_classes(m, 3)), paths(m));
}

TEST(Balance, RandomCountsAllEqualMinimum) {
  cxr::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t a = 1 + rng.below(50), b = 1 + rng.below(50), c = 1 + rng.below(50);
    const auto bal = cxr::balance_classes(synthetic_manifest(a, b, c), rng.next());
    const std::size_t lo = std::min({a, b, c});
    EXPECT_EQ(bal.class_counts(), (std::array<std::size_t, 3>{lo, lo, lo}));
  }
}

TEST(Balance, EmptyClassRejected) {
  EXPECT_EQ(dataset_error_kind([] { cxr::balance_classes(synthetic_manifest(3, 0, 2), 1); }),
            cxr::DatasetError::Kind::empty_class);
}

TEST(Split, FullScaleCounts) {
  EXPECT_EQ(cxr::test_count_for(4152, 0.2), 830u);
  const auto s = cxr::stratified_split(synthetic_manifest(4152, 4152, 4152), 0.2, 11);
  EXPECT_EQ(s.test.class_counts(), (std::array<std::size_t, 3>{830, 830, 830}));
  EXPECT_EQ(s.train.class_counts(), (std::array<std::size_t, 3>{3322, 3322, 3322}));
}

TEST(Split, RoundingRule) {
  // round(3 * 0.999) = round(2.997) = 3: every item goes to test
  EXPECT_EQ(cxr::test_count_for(3, 0.999), 3u);
  EXPECT_EQ(cxr::test_count_for(5, 0.5), 3u);  // 2.5 rounds half away from zero
  EXPECT_EQ(cxr::test_count_for(10, 0.04), 0u);
  const auto s = cxr::stratified_split(synthetic_manifest(3, 3, 3), 0.999, 1);
  EXPECT_EQ(s.test.size(), 9u);
  EXPECT_EQ(s.train.size(), 0u);
}

TEST(Split, FractionOutOfRange) {
  const auto m = synthetic_manifest(3, 3, 3);
  EXPECT_THROW(cxr::stratified_split(m, 1.2, 1), cxr::ConfigError);
  EXPECT_THROW(cxr::stratified_split(m, 0.0, 1), cxr::ConfigError);
  EXPECT_THROW(cxr::stratified_split(m, 1.0, 1), cxr::ConfigError);
}

TEST(Split, IsAStratifiedPartition) {
  cxr::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = synthetic_manifest(1 + rng.below(40), 1 + rng.below(40), 1 + rng.below(40));
    const double frac = rng.uniform(0.05, 0.95);
    const auto s = cxr::stratified_split(m, frac, rng.next());
    EXPECT_EQ(s.train.size() + s.test.size(), m.size());
    std::set<std::string> both = paths(s.train);
    for (const auto& p : paths(s.test)) EXPECT_TRUE(both.insert(p).second) << p;
    EXPECT_EQ(both, paths(m));
    for (std::size_t c = 0; c < 3; ++c) {
      const double target = frac * static_cast<double>(m.class_counts()[c]);
      EXPECT_LE(std::abs(static_cast<double>(s.test.class_counts()[c]) - target), 1.0);
    }
  }
}

TEST(Pipeline, DeterministicAndUnitRange) {
  TempDir dir;
  testing_support::write_pattern_tree(dir.path(), 4, 20, 9);
  auto run = [&] {
    return cxr::stratified_split(cxr::balance_classes(cxr::scan_directory(dir.path()), 3), 0.25, 3);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.train.entries(), b.train.entries());
  EXPECT_EQ(a.test.entries(), b.test.entries());

  const auto images = cxr::load_images(dir.path(), a.train, 32);
  ASSERT_EQ(images.size(), a.train.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    EXPECT_EQ(images[i].pixels.shape(), (cxr::Shape{32, 32, 3}));
    EXPECT_EQ(images[i].label, a.train.entries()[i].label);
    for (auto v : images[i].pixels.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Pipeline, UnreadableFileReportsPath) {
  TempDir dir;
  testing_support::write_pattern_tree(dir.path(), 1, 8, 1);
  testing_support::write_text(dir.path() / "normal" / "broken.png", "\x89PNG\r\n\x1a\n truncated");
  const auto m = cxr::scan_directory(dir.path());
  try {
    cxr::load_images(dir.path(), m, 8);
    FAIL() << "expected DatasetError";
  } catch (const cxr::DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("normal/broken.png"), std::string::npos);
  }
}

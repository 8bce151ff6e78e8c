#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cxrnet/error.hpp"
#include "cxrnet/image.hpp"
#include "cxrnet/parallel.hpp"
#include "cxrnet/random.hpp"
#include "cxrnet/tensor.hpp"

namespace cxr {

enum class CxrClass : std::uint8_t { normal = 0, influenza_pneumonia = 1, covid19_pneumonia = 2 };

inline constexpr std::size_t kNumClasses = 3;

/// Class directory names, indexed by label.
inline const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names = {"normal", "influenza_pneumonia", "covid19_pneumonia"};
  return names;
}

inline std::vector<std::string> class_label_list() { return {class_names().begin(), class_names().end()}; }

struct LabeledImage {
  Tensor pixels;  // [H x W x 3], values in [0, 1]
  std::size_t label = 0;
  std::string source_path;
};

struct ManifestEntry {
  std::string path;  // relative to the dataset root, '/' separated
  std::size_t label = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Files and labels of a dataset tree. Counts are derived from the entries so
/// they cannot drift.
class DatasetManifest {
 public:
  DatasetManifest() = default;

  explicit DatasetManifest(std::vector<ManifestEntry> entries, std::vector<std::string> warnings = {})
      : entries_(std::move(entries)), warnings_(std::move(warnings)) {
    std::set<std::string> seen;
    for (const auto& e : entries_) {
      if (e.label >= kNumClasses) {
        throw DatasetError(DatasetError::Kind::bad_manifest, "manifest: label " + std::to_string(e.label) + " for " + e.path);
      }
      if (!seen.insert(e.path).second) {
        throw DatasetError(DatasetError::Kind::duplicate_path, "manifest: duplicate path " + e.path);
      }
    }
  }

  const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::array<std::size_t, kNumClasses> class_counts() const {
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& e : entries_) ++counts[e.label];
    return counts;
  }

  std::vector<ManifestEntry> of_class(std::size_t label) const {
    std::vector<ManifestEntry> out;
    std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(out),
                 [label](const ManifestEntry& e) { return e.label == label; });
    return out;
  }

 private:
  std::vector<ManifestEntry> entries_;
  std::vector<std::string> warnings_;
};

struct SplitDataset {
  DatasetManifest train;
  DatasetManifest test;
  std::uint64_t seed = 0;
};

namespace detail {
inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline void require_nonempty_classes(const std::array<std::size_t, kNumClasses>& counts) {
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) {
      throw DatasetError(DatasetError::Kind::empty_class, "dataset: class '" + class_names()[c] + "' has no images");
    }
  }
}
}  // namespace detail

/// Lists every .png/.jpg/.jpeg file below <root>/{normal,influenza_pneumonia,covid19_pneumonia}/.
/// Other files are skipped and reported in warnings(). Entries are sorted by path.
inline DatasetManifest scan_directory(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> warnings;
  for (std::size_t label = 0; label < kNumClasses; ++label) {
    const fs::path dir = root / class_names()[label];
    if (!fs::is_directory(dir)) {
      throw DatasetError(DatasetError::Kind::missing_class_directory,
                         "dataset: missing class directory " + dir.string());
    }
    std::size_t found = 0;
    for (const auto& item : fs::recursive_directory_iterator(dir)) {
      if (!item.is_regular_file()) continue;
      const std::string rel = fs::relative(item.path(), root).generic_string();
      if (!detail::has_image_extension(item.path())) {
        warnings.push_back("skipped non-image file " + rel);
        continue;
      }
      entries.push_back({rel, label});
      ++found;
    }
    if (found == 0) {
      throw DatasetError(DatasetError::Kind::empty_class, "dataset: class directory " + dir.string() + " has no images");
    }
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  std::sort(warnings.begin(), warnings.end());
  return DatasetManifest(std::move(entries), std::move(warnings));
}

/// Undersamples every class (uniformly, without replacement) to the size of the
/// smallest class. Selected entries keep their original relative order.
inline DatasetManifest balance_classes(const DatasetManifest& manifest, std::uint64_t seed) {
  const auto counts = manifest.class_counts();
  detail::require_nonempty_classes(counts);
  const std::size_t target = *std::min_element(counts.begin(), counts.end());

  std::vector<bool> keep(manifest.size(), false);
  for (std::size_t label = 0; label < kNumClasses; ++label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      if (manifest.entries()[i].label == label) idx.push_back(i);
    }
    Rng rng(derive_seed(seed, label));
    // partial Fisher-Yates: the first `target` slots become a uniform sample
    for (std::size_t i = 0; i < target; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
      keep[idx[i]] = true;
    }
  }
  std::vector<ManifestEntry> out;
  out.reserve(target * kNumClasses);
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (keep[i]) out.push_back(manifest.entries()[i]);
  }
  return DatasetManifest(std::move(out), manifest.warnings());
}

/// Number of test items taken from a class of `count` items.
inline std::size_t test_count_for(std::size_t count, double test_fraction) {
  return static_cast<std::size_t>(std::round(static_cast<double>(count) * test_fraction));
}

/// Per class: seeded shuffle, then the first round(count * test_fraction) items go to test.
inline SplitDataset stratified_split(const DatasetManifest& manifest, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("stratified_split: test_fraction must be in (0, 1), got " + std::to_string(test_fraction));
  }
  std::vector<ManifestEntry> train, test;
  for (std::size_t label = 0; label < kNumClasses; ++label) {
    auto items = manifest.of_class(label);
    Rng rng(derive_seed(seed ^ 0x5151u, label));
    rng.shuffle(std::span(items));
    const std::size_t cut = test_count_for(items.size(), test_fraction);
    test.insert(test.end(), items.begin(), items.begin() + static_cast<std::ptrdiff_t>(cut));
    train.insert(train.end(), items.begin() + static_cast<std::ptrdiff_t>(cut), items.end());
  }
  return {DatasetManifest(std::move(train)), DatasetManifest(std::move(test)), seed};
}

/// Writes `<label>\t<relative-path>` lines.
inline void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("manifest: cannot write " + file.string());
  for (const auto& e : manifest.entries()) out << e.label << '\t' << e.path << '\n';
  if (!out) throw IoError("manifest: write failed for " + file.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("manifest: cannot read " + file.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw DatasetError(DatasetError::Kind::bad_manifest, "manifest: malformed line " + std::to_string(lineno));
    }
    const std::string label_text = line.substr(0, tab);
    if (label_text.size() != 1 || label_text[0] < '0' || label_text[0] >= static_cast<char>('0' + kNumClasses)) {
      throw DatasetError(DatasetError::Kind::bad_manifest, "manifest: bad label on line " + std::to_string(lineno));
    }
    entries.push_back({line.substr(tab + 1), static_cast<std::size_t>(label_text[0] - '0')});
  }
  return DatasetManifest(std::move(entries));
}

inline std::string read_file_bytes(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Random-access view of labeled training examples.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t label(std::size_t i) const = 0;
  /// Pixels of example i as [H x W x 3].
  virtual Tensor pixels(std::size_t i) const = 0;
};

class InMemorySamples final : public SampleSource {
 public:
  InMemorySamples() = default;
  explicit InMemorySamples(std::vector<LabeledImage> images) : images_(std::move(images)) {}

  std::size_t size() const override { return images_.size(); }
  std::size_t label(std::size_t i) const override { return images_.at(i).label; }
  Tensor pixels(std::size_t i) const override { return images_.at(i).pixels; }

  const std::vector<LabeledImage>& images() const noexcept { return images_; }
  void push_back(LabeledImage img) { images_.push_back(std::move(img)); }

 private:
  std::vector<LabeledImage> images_;
};

/// Loads and preprocesses files on demand; nothing is cached.
class FileSamples final : public SampleSource {
 public:
  FileSamples(std::filesystem::path root, DatasetManifest manifest, std::size_t side = kInputSide)
      : root_(std::move(root)), manifest_(std::move(manifest)), side_(side) {}

  std::size_t size() const override { return manifest_.size(); }
  std::size_t label(std::size_t i) const override { return manifest_.entries().at(i).label; }
  Tensor pixels(std::size_t i) const override { return load(i).pixels; }

  LabeledImage load(std::size_t i) const {
    const auto& e = manifest_.entries().at(i);
    const auto path = root_ / e.path;
    return {preprocess_image(read_file_bytes(path), side_, side_), e.label, path.string()};
  }

  const DatasetManifest& manifest() const noexcept { return manifest_; }

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
  std::size_t side_;
};

/// Decodes every manifest entry (files are processed concurrently; the result order
/// follows the manifest).
inline std::vector<LabeledImage> load_images(const std::filesystem::path& root, const DatasetManifest& manifest,
                                             std::size_t side = kInputSide) {
  FileSamples files(root, manifest, side);
  std::vector<LabeledImage> out(manifest.size());
  std::vector<std::string> errors(manifest.size());
  parallel_for(manifest.size(), 4, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        out[i] = files.load(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!errors[i].empty()) throw DatasetError(DatasetError::Kind::io, manifest.entries()[i].path + ": " + errors[i]);
  }
  return out;
}

}  // namespace cxr

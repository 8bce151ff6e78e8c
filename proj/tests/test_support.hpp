#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "cxrnet/dataset.hpp"
#include "cxrnet/image.hpp"
#include "cxrnet/random.hpp"

namespace testing_support {

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("cxrnet-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

inline std::string as_string(const std::vector<std::uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }

/// 8-bit RGB image with a class-specific pattern: 0 horizontal stripes,
/// 1 vertical stripes, 2 a bright centered square. Phase and noise vary per sample.
inline cxr::Image8 pattern_image(std::size_t label, std::size_t side, cxr::Rng& rng) {
  cxr::Image8 img(cxr::Shape{side, side, 3});
  const std::size_t phase = static_cast<std::size_t>(rng.below(4));
  const std::size_t margin = side / 4 + static_cast<std::size_t>(rng.below(3));
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      bool on = false;
      switch (label) {
        case 0: on = ((y + phase) / 2) % 2 == 0; break;
        case 1: on = ((x + phase) / 2) % 2 == 0; break;
        default: on = y >= margin && y < side - margin && x >= margin && x < side - margin; break;
      }
      const double base = on ? 200.0 : 40.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = base + rng.uniform(-25.0, 25.0);
        img.at({y, x, c}) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return img;
}

/// `per_class` normalized pattern images per class, in class order.
inline std::vector<cxr::LabeledImage> pattern_dataset(std::size_t per_class, std::size_t side, std::uint64_t seed) {
  cxr::Rng rng(seed);
  std::vector<cxr::LabeledImage> out;
  for (std::size_t label = 0; label < cxr::kNumClasses; ++label) {
    for (std::size_t i = 0; i < per_class; ++i) {
      out.push_back({cxr::normalize(pattern_image(label, side, rng)), label, "synthetic"});
    }
  }
  return out;
}

/// Writes a PNG dataset tree <root>/<class>/img_<i>.png.
inline void write_pattern_tree(const std::filesystem::path& root, std::size_t per_class, std::size_t side,
                               std::uint64_t seed) {
  cxr::Rng rng(seed);
  for (std::size_t label = 0; label < cxr::kNumClasses; ++label) {
    for (std::size_t i = 0; i < per_class; ++i) {
      write_bytes(root / cxr::class_names()[label] / ("img_" + std::to_string(i) + ".png"),
                  cxr::encode_png(pattern_image(label, side, rng)));
    }
  }
}

}  // namespace testing_support

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cxrnet/image.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using cxr::Image8;
using cxr::Shape;

TEST(Decode, GrayscalePngReplicatesChannel) {
  Image8 gray(Shape{2, 3, 1}, std::uint8_t{200});
  const auto img = cxr::decode_image(cxr::encode_png(gray));
  ASSERT_EQ(img.shape(), (Shape{2, 3, 3}));
  for (auto v : img.data()) EXPECT_EQ(v, 200);
}

TEST(Decode, RgbaPngDropsAlpha) {
  Image8 rgba(Shape{1, 2, 4}, std::vector<std::uint8_t>{10, 20, 30, 0, 40, 50, 60, 255});
  const auto img = cxr::decode_image(cxr::encode_png(rgba));
  ASSERT_EQ(img.shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(std::vector<std::uint8_t>(img.data().begin(), img.data().end()),
            (std::vector<std::uint8_t>{10, 20, 30, 40, 50, 60}));
}

TEST(Decode, RgbPngRoundTrip) {
  cxr::Rng rng(1);
  Image8 rgb(Shape{5, 7, 3});
  for (auto& v : rgb.data()) v = static_cast<std::uint8_t>(rng.below(256));
  EXPECT_EQ(cxr::decode_image(cxr::encode_png(rgb)), rgb);
}

TEST(Decode, JpegGrayAndColor) {
  Image8 gray(Shape{16, 16, 1}, std::uint8_t{128});
  const auto g = cxr::decode_image(cxr::encode_jpeg(gray));
  ASSERT_EQ(g.shape(), (Shape{16, 16, 3}));
  for (std::size_t i = 0; i < g.size(); i += 3) {
    EXPECT_EQ(g[i], g[i + 1]);
    EXPECT_EQ(g[i], g[i + 2]);
    EXPECT_NEAR(g[i], 128, 2);
  }
  Image8 rgb(Shape{8, 8, 3}, std::uint8_t{90});
  const auto c = cxr::decode_image(cxr::encode_jpeg(rgb, 95));
  ASSERT_EQ(c.shape(), (Shape{8, 8, 3}));
  for (auto v : c.data()) EXPECT_NEAR(v, 90, 3);
}

TEST(Decode, TruncatedFilesFail) {
  cxr::Rng rng(2);
  Image8 rgb(Shape{32, 32, 3});
  for (auto& v : rgb.data()) v = static_cast<std::uint8_t>(rng.below(256));
  auto png = cxr::encode_png(rgb);
  png.resize(png.size() / 2);
  EXPECT_THROW(cxr::decode_image(png), cxr::DecodeError);
  auto jpg = cxr::encode_jpeg(rgb);
  jpg.resize(jpg.size() / 2);
  EXPECT_THROW(cxr::decode_image(jpg), cxr::DecodeError);
}

TEST(Decode, UnknownBytesAreUnsupported) {
  EXPECT_THROW(cxr::decode_image(std::string_view("hello, this is text")), cxr::UnsupportedFormatError);
  EXPECT_THROW(cxr::decode_image(std::string_view("")), cxr::UnsupportedFormatError);
}

TEST(Resize, ConstantImageStaysConstant) {
  for (auto [h, w] : {std::pair{1u, 1u}, {7u, 13u}, {512u, 301u}}) {
    Image8 img(Shape{h, w, 3}, std::uint8_t{42});
    const auto out = cxr::resize_bilinear(img);
    ASSERT_EQ(out.shape(), (Shape{300, 300, 3}));
    for (auto v : out.data()) ASSERT_EQ(v, 42.0f);
  }
}

TEST(Resize, SameSizeIsExactIdentity) {
  cxr::Rng rng(4);
  Image8 img(Shape{300, 300, 3});
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.below(256));
  const auto out = cxr::resize_bilinear(img);
  for (std::size_t i = 0; i < img.size(); ++i) ASSERT_EQ(out[i], static_cast<float>(img[i]));
}

TEST(Resize, TwoByTwoToFourByFourMatchesOracle) {
  const std::vector<double> src{0, 255, 255, 0};
  const auto ref = oracle::bilinear(src, 2, 2, 4, 4);
  // hand values for the first row: source x = 0, 0.25, 0.75, 1 (clamped)
  EXPECT_DOUBLE_EQ(ref[0], 0.0);
  EXPECT_DOUBLE_EQ(ref[1], 63.75);
  EXPECT_DOUBLE_EQ(ref[2], 191.25);
  EXPECT_DOUBLE_EQ(ref[3], 255.0);

  Image8 img(Shape{2, 2, 3});
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t c = 0; c < 3; ++c) img[p * 3 + c] = static_cast<std::uint8_t>(src[p]);
  const auto out = cxr::resize_bilinear(img, 4, 4);
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out[p * 3 + c], ref[p], 1e-4) << "pixel " << p;
}

TEST(Resize, RandomSizesMatchOracle) {
  cxr::Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = 1 + rng.below(20), w = 1 + rng.below(20), oh = 1 + rng.below(25), ow = 1 + rng.below(25);
    Image8 img(Shape{h, w, 1});
    std::vector<double> src(h * w);
    for (std::size_t i = 0; i < src.size(); ++i) {
      img[i] = static_cast<std::uint8_t>(rng.below(256));
      src[i] = img[i];
    }
    const auto ref = oracle::bilinear(src, h, w, oh, ow);
    const auto out = cxr::resize_bilinear(img, oh, ow);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(out[i], ref[i], 1e-3);
  }
}

TEST(Normalize, DividesBy255) {
  cxr::Tensor px{255.0f, 0.0f, 128.0f};
  const auto n = cxr::normalize(px);
  EXPECT_EQ(n[0], 1.0f);
  EXPECT_EQ(n[1], 0.0f);
  EXPECT_NEAR(n[2], 0.501961, 1e-6);
  EXPECT_THROW(cxr::normalize(cxr::Tensor{256.0f}), cxr::ValueRangeError);
  EXPECT_THROW(cxr::normalize(cxr::Tensor{-1.0f}), cxr::ValueRangeError);
}

TEST(Preprocess, OutputInUnitRange) {
  cxr::Rng rng(6);
  Image8 img(Shape{37, 53, 3});
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.below(256));
  const auto t = cxr::preprocess_image(testing_support::as_string(cxr::encode_png(img)));
  ASSERT_EQ(t.shape(), (Shape{300, 300, 3}));
  for (auto v : t.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

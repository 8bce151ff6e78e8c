#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "cxrnet/error.hpp"
#include "cxrnet/tensor.hpp"

namespace cxr {

/// Decoded 8-bit image, shape [H x W x 3].
using Image8 = BasicTensor<std::uint8_t>;

inline constexpr std::size_t kInputSide = 300;

enum class ImageFormat { png, jpeg, unknown };

inline ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) return ImageFormat::png;
  if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) return ImageFormat::jpeg;
  return ImageFormat::unknown;
}

namespace detail {

// State reached through a pointer that is fixed before setjmp, so it stays
// valid after a longjmp out of libpng/libjpeg.
struct PngReadState {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  char message[200] = {0};
};

inline void png_read_from_span(png_structp png, png_bytep out, png_size_t len) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->pos + len > st->bytes.size()) png_error(png, "unexpected end of data");
  std::memcpy(out, st->bytes.data() + st->pos, len);
  st->pos += len;
}

inline void png_on_error(png_structp png, png_const_charp msg) {
  auto* st = static_cast<PngReadState*>(png_get_error_ptr(png));
  std::snprintf(st->message, sizeof st->message, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_on_warning(png_structp, png_const_charp) {}

inline Image8 decode_png(std::span<const std::uint8_t> bytes) {
  auto st = std::make_unique<PngReadState>();
  st->bytes = bytes;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, st.get(), png_on_error, png_on_warning);
  if (!png) throw DecodeError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DecodeError("png: out of memory");
  }
  png_uint_32 width = 0, height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError(std::string("png: ") + st->message);
  }
  png_set_read_fn(png, st.get(), png_read_from_span);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(width) * 3) {
    png_error(png, "unexpected row layout");
  }
  st->pixels.resize(static_cast<std::size_t>(width) * height * 3);
  st->rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) st->rows[y] = st->pixels.data() + static_cast<std::size_t>(y) * width * 3;
  png_read_image(png, st->rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return Image8(Shape{height, width, 3}, std::move(st->pixels));
}

struct JpegReadState {
  jpeg_error_mgr err{};
  std::jmp_buf jump{};
  std::vector<std::uint8_t> pixels;
  char message[JMSG_LENGTH_MAX] = {0};
};

inline void jpeg_on_error(j_common_ptr cinfo) {
  auto* st = reinterpret_cast<JpegReadState*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, st->message);
  std::longjmp(st->jump, 1);
}

// Corrupt or truncated streams only raise warnings in libjpeg; treat them as fatal.
inline void jpeg_on_message(j_common_ptr cinfo, int level) {
  if (level < 0) jpeg_on_error(cinfo);
}

inline Image8 decode_jpeg(std::span<const std::uint8_t> bytes) {
  auto st = std::make_unique<JpegReadState>();
  jpeg_decompress_struct cinfo{};
  cinfo.err = jpeg_std_error(&st->err);
  st->err.error_exit = jpeg_on_error;
  st->err.emit_message = jpeg_on_message;
  if (setjmp(st->jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(std::string("jpeg: ") + st->message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const std::size_t w = cinfo.output_width, h = cinfo.output_height;
  const std::size_t comps = static_cast<std::size_t>(cinfo.output_components);
  st->pixels.resize(w * h * 3);
  std::vector<std::uint8_t>& pixels = st->pixels;
  while (cinfo.output_scanline < cinfo.output_height) {
    const std::size_t y = cinfo.output_scanline;
    JSAMPROW row = pixels.data() + y * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
    if (comps == 1) {
      // expand in place from the back so the gray run is not overwritten
      for (std::size_t x = w; x-- > 0;) {
        const std::uint8_t g = row[x];
        row[3 * x] = row[3 * x + 1] = row[3 * x + 2] = g;
      }
    }
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return Image8(Shape{h, w, 3}, std::move(st->pixels));
}

}  // namespace detail

/// Decodes PNG or JPEG bytes into an [H x W x 3] 8-bit image. Gray sources are
/// replicated into all three channels and alpha is dropped.
inline Image8 decode_image(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::png: return detail::decode_png(bytes);
    case ImageFormat::jpeg: return detail::decode_jpeg(bytes);
    case ImageFormat::unknown: break;
  }
  throw UnsupportedFormatError("image is neither PNG nor JPEG");
}

inline Image8 decode_image(std::string_view bytes) {
  return decode_image(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

namespace detail {
inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}
inline void png_flush_noop(png_structp) {}
}  // namespace detail

/// Encodes an 8-bit image with 1 (gray), 3 (RGB) or 4 (RGBA) channels as PNG.
inline std::vector<std::uint8_t> encode_png(const Image8& img) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3 && img.dim(2) != 4)) {
    throw ShapeError("encode_png: expected [H x W x {1,3,4}], got " + to_string(img.shape()));
  }
  auto out = std::make_unique<std::vector<std::uint8_t>>();
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("encode_png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("encode_png: libpng failure");
  }
  const int color = c == 1 ? PNG_COLOR_TYPE_GRAY : c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_RGBA;
  png_set_write_fn(png, out.get(), detail::png_write_to_vector, detail::png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.raw() + y * w * c));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return std::move(*out);
}

/// Encodes an 8-bit gray or RGB image as baseline JPEG.
inline std::vector<std::uint8_t> encode_jpeg(const Image8& img, int quality = 90) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3)) {
    throw ShapeError("encode_jpeg: expected [H x W x {1,3}], got " + to_string(img.shape()));
  }
  jpeg_compress_struct cinfo{};
  jpeg_error_mgr err{};
  cinfo.err = jpeg_std_error(&err);
  jpeg_create_compress(&cinfo);
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.dim(1));
  cinfo.image_height = static_cast<JDIMENSION>(img.dim(0));
  cinfo.input_components = static_cast<int>(img.dim(2));
  cinfo.in_color_space = img.dim(2) == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = img.dim(1) * img.dim(2);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(img.raw() + cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

/// Bilinear resize with half-pixel centers: output pixel (y, x) samples the
/// source at ((y + 0.5) * H / out_h - 0.5, (x + 0.5) * W / out_w - 0.5),
/// clamped to the image edge.
template <typename Src>
Tensor resize_bilinear(const BasicTensor<Src>& img, std::size_t out_h = kInputSide, std::size_t out_w = kInputSide) {
  if (img.rank() != 3) throw ShapeError("resize_bilinear: expected [H x W x C], got " + to_string(img.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: output size must be positive");
  const std::size_t in_h = img.dim(0), in_w = img.dim(1), ch = img.dim(2);

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(s));
      t[i] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(in_h, out_h);
  const auto tx = taps(in_w, out_w);

  Tensor out(Shape{out_h, out_w, ch});
  const Src* src = img.raw();
  float* dst = out.raw();
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap& a = ty[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const Tap& b = tx[x];
      for (std::size_t c = 0; c < ch; ++c) {
        const double p00 = src[(a.lo * in_w + b.lo) * ch + c];
        const double p01 = src[(a.lo * in_w + b.hi) * ch + c];
        const double p10 = src[(a.hi * in_w + b.lo) * ch + c];
        const double p11 = src[(a.hi * in_w + b.hi) * ch + c];
        const double top = p00 + (p01 - p00) * b.frac;
        const double bottom = p10 + (p11 - p10) * b.frac;
        dst[(y * out_w + x) * ch + c] = static_cast<float>(top + (bottom - top) * a.frac);
      }
    }
  }
  return out;
}

/// Maps pixel intensities in [0, 255] to [0, 1] by dividing by 255.
template <typename Src>
Tensor normalize(const BasicTensor<Src>& img) {
  std::vector<float> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = static_cast<double>(img[i]);
    if (!(v >= 0.0 && v <= 255.0)) {
      throw ValueRangeError("normalize: value " + std::to_string(v) + " outside [0, 255]");
    }
    out[i] = static_cast<float>(img[i]) / 255.0f;
  }
  return Tensor(img.shape(), std::move(out));
}

/// The single preprocessing path shared by dataset loading and the inference
/// service: decode, bilinear resize, divide by 255.
inline Tensor preprocess_image(std::span<const std::uint8_t> bytes, std::size_t out_h = kInputSide,
                               std::size_t out_w = kInputSide) {
  return normalize(resize_bilinear(decode_image(bytes), out_h, out_w));
}

inline Tensor preprocess_image(std::string_view bytes, std::size_t out_h = kInputSide, std::size_t out_w = kInputSide) {
  return preprocess_image(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()), out_h, out_w);
}

}  // namespace cxr

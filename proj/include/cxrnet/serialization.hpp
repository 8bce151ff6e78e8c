#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "cxrnet/error.hpp"
#include "cxrnet/model.hpp"

// CXRM model file, all integers and reals little-endian:
//
//   "CXRM"                       magic
//   u32 format_version           = 1
//   u32 rank, u32 dims[rank]     per-sample input shape (H, W, C)
//   u32 layer_count
//   layer records                u8 tag + u32 hyperparameters:
//     1 conv2d   in_channels filters kernel_h kernel_w stride padding
//     2 relu
//     3 maxpool  window_h window_w stride
//     4 flatten
//     5 dense    in_units out_units
//     6 softmax
//   parameter blobs              f32, layer order; weights then bias
//   u32 label_count, then per label: u32 byte length + UTF-8 bytes
//   u32 crc32                    of every preceding byte

namespace cxr {

inline constexpr char kModelMagic[4] = {'C', 'X', 'R', 'M'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

enum class LayerTag : std::uint8_t { conv2d = 1, relu = 2, maxpool = 3, flatten = 4, dense = 5, softmax = 6 };

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32_checked(std::size_t v) {
    if (v > 0xffffffffu) throw Error("model file: value exceeds 32 bits");
    u32(static_cast<std::uint32_t>(v));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw CorruptModelError(CorruptModelError::Reason::truncated, "model file: truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const Tensor& t) {
  for (float v : t.data()) w.f32(v);
}

inline Tensor read_tensor(ByteReader& r, Shape shape) {
  const std::size_t available = r.remaining() / 4;
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0 || n > available / d) {
      throw CorruptModelError(CorruptModelError::Reason::shape, "model file: parameter blob larger than file");
    }
    n *= d;
  }
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = r.f32();
  return t;
}

inline CorruptModelError shape_error(const std::string& what) {
  return CorruptModelError(CorruptModelError::Reason::shape, "model file: " + what);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const Model<float>& model) {
  detail::ByteWriter w;
  w.bytes(kModelMagic, 4);
  w.u32(kModelFormatVersion);
  w.u32_checked(model.input_shape().size());
  for (auto d : model.input_shape()) w.u32_checked(d);
  w.u32_checked(model.layers().size());
  for (const auto& layer : model.layers()) {
    std::visit(overloaded{
                   [&](const Conv2D<float>& c) {
                     w.u8(static_cast<std::uint8_t>(LayerTag::conv2d));
                     for (auto v : {c.in_channels, c.filters, c.kernel_h, c.kernel_w, c.stride, c.padding}) w.u32_checked(v);
                   },
                   [&](const ReLU&) { w.u8(static_cast<std::uint8_t>(LayerTag::relu)); },
                   [&](const MaxPool2D& p) {
                     w.u8(static_cast<std::uint8_t>(LayerTag::maxpool));
                     for (auto v : {p.window_h, p.window_w, p.stride}) w.u32_checked(v);
                   },
                   [&](const Flatten&) { w.u8(static_cast<std::uint8_t>(LayerTag::flatten)); },
                   [&](const Dense<float>& d) {
                     w.u8(static_cast<std::uint8_t>(LayerTag::dense));
                     w.u32_checked(d.in_units);
                     w.u32_checked(d.out_units);
                   },
                   [&](const Softmax&) { w.u8(static_cast<std::uint8_t>(LayerTag::softmax)); },
               },
               layer);
  }
  for (const auto* p : model.parameters()) detail::write_tensor(w, *p);
  w.u32_checked(model.class_labels().size());
  for (const auto& label : model.class_labels()) {
    w.u32_checked(label.size());
    w.bytes(label.data(), label.size());
  }
  w.u32(crc32_of(w.buffer()));
  return std::move(w.buffer());
}

/// Parses a CXRM byte image. Checks run in order: magic, version, CRC, then
/// structure, so a flipped byte is always reported as one of those causes.
inline Model<float> deserialize_model(std::span<const std::uint8_t> bytes) {
  using Reason = CorruptModelError::Reason;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0) {
    throw CorruptModelError(Reason::magic, "model file: bad magic (expected CXRM)");
  }
  if (bytes.size() < 12) throw CorruptModelError(Reason::truncated, "model file: truncated header");
  detail::ByteReader header(bytes.subspan(4, 4));
  const std::uint32_t version = header.u32();
  if (version != kModelFormatVersion) {
    throw CorruptModelError(Reason::version, "model file: unsupported format version " + std::to_string(version));
  }
  const auto body = bytes.first(bytes.size() - 4);
  detail::ByteReader tail(bytes.last(4));
  if (crc32_of(body) != tail.u32()) throw CorruptModelError(Reason::crc, "model file: CRC-32 mismatch");

  detail::ByteReader r(body.subspan(8));
  const std::uint32_t rank = r.u32();
  if (rank != 3) throw detail::shape_error("input rank must be 3");
  Shape input;
  for (std::uint32_t i = 0; i < rank; ++i) {
    input.push_back(r.u32());
    if (input.back() == 0) throw detail::shape_error("zero input dimension");
  }
  const std::uint32_t count = r.u32();
  if (count == 0 || count > 4096) throw detail::shape_error("implausible layer count");
  std::vector<Layer<float>> layers;
  Shape cur = input;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto tag = static_cast<LayerTag>(r.u8());
    switch (tag) {
      case LayerTag::conv2d: {
        std::uint32_t v[6];
        for (auto& x : v) x = r.u32();
        if (v[0] == 0 || v[1] == 0 || v[2] == 0 || v[3] == 0 || v[4] == 0) throw detail::shape_error("conv hyperparameter is zero");
        Conv2D<float> c;
        c.in_channels = v[0];
        c.filters = v[1];
        c.kernel_h = v[2];
        c.kernel_w = v[3];
        c.stride = v[4];
        c.padding = v[5];
        layers.emplace_back(std::move(c));
        break;
      }
      case LayerTag::relu: layers.emplace_back(ReLU{}); break;
      case LayerTag::maxpool: {
        MaxPool2D p{r.u32(), r.u32(), r.u32()};
        if (p.window_h == 0 || p.window_w == 0 || p.stride == 0) throw detail::shape_error("pool hyperparameter is zero");
        layers.emplace_back(p);
        break;
      }
      case LayerTag::flatten: layers.emplace_back(Flatten{}); break;
      case LayerTag::dense: {
        Dense<float> d;
        d.in_units = r.u32();
        d.out_units = r.u32();
        if (d.in_units == 0 || d.out_units == 0) throw detail::shape_error("dense unit count is zero");
        layers.emplace_back(std::move(d));
        break;
      }
      case LayerTag::softmax: layers.emplace_back(Softmax{}); break;
      default: throw detail::shape_error("unknown layer tag " + std::to_string(static_cast<int>(tag)));
    }
    try {
      cur = layer_output_shape(layers.back(), cur);
    } catch (const ShapeError& e) {
      throw detail::shape_error(std::string("layer ") + std::to_string(i) + ": " + e.what());
    }
  }
  for (auto& layer : layers) {
    if (auto* c = std::get_if<Conv2D<float>>(&layer)) {
      c->weights = detail::read_tensor(r, Shape{c->kernel_h, c->kernel_w, c->in_channels, c->filters});
      c->bias = detail::read_tensor(r, Shape{c->filters});
    } else if (auto* d = std::get_if<Dense<float>>(&layer)) {
      d->weights = detail::read_tensor(r, Shape{d->in_units, d->out_units});
      d->bias = detail::read_tensor(r, Shape{d->out_units});
    }
  }
  const std::uint32_t label_count = r.u32();
  if (label_count > 1024) throw detail::shape_error("implausible label count");
  std::vector<std::string> labels;
  for (std::uint32_t i = 0; i < label_count; ++i) {
    const std::uint32_t len = r.u32();
    labels.push_back(r.str(len));
  }
  if (r.remaining() != 0) throw detail::shape_error("trailing bytes before CRC");
  try {
    return Model<float>(std::move(input), std::move(layers), std::move(labels));
  } catch (const ShapeError& e) {
    throw detail::shape_error(e.what());
  }
}

inline void save_model(const Model<float>& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_model: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("save_model: write failed for " + path.string());
}

inline std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Model<float> load_model(const std::filesystem::path& path) { return deserialize_model(read_binary_file(path)); }

/// Identifier of exact weights: "cxrm-<version>-<crc32 hex>", using the CRC of
/// the file body (a CRC over the whole file, stored CRC included, is constant).
inline std::string model_version_tag(std::span<const std::uint8_t> file_bytes) {
  const auto body = file_bytes.size() >= 4 ? file_bytes.first(file_bytes.size() - 4) : file_bytes;
  char buf[32];
  std::snprintf(buf, sizeof buf, "cxrm-%u-%08x", kModelFormatVersion, crc32_of(body));
  return buf;
}

}  // namespace cxr

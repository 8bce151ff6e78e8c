#pragma once

#include <stdexcept>
#include <string>

namespace cxr {

/// Base class for every error raised by cxrnet.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class EmptyTensorError : public Error {
 public:
  using Error::Error;
};

class ValueRangeError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  enum class Kind { missing_class_directory, empty_class, duplicate_path, bad_manifest, empty_dataset, io };

  DatasetError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training loss or parameters became NaN/Inf.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CorruptModelError : public Error {
 public:
  enum class Reason { magic, version, crc, shape, truncated };

  CorruptModelError(Reason reason, const std::string& what) : Error(what), reason_(reason) {}
  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

}  // namespace cxr

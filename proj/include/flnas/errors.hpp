#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flnas {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed document text. `line` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed JSON that does not match the expected schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  ShapeError(std::size_t layer_index, const std::string& message)
      : Error("layer " + std::to_string(layer_index) + ": " + message), layer_index_(layer_index),
        detail_(message) {}
  std::size_t layer_index() const noexcept { return layer_index_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::size_t layer_index_;
  std::string detail_;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

// A record or CSV does not match the demographic schema.
class SchemaMismatch : public Error {
 public:
  using Error::Error;
};

class UndefinedRate : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace flnas

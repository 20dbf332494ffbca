#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace inrprop {

/// Base of every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values (counts, rates, enum combinations).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (shapes, empty inputs).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite value.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long epoch = -1)
      : Error(epoch >= 0 ? what + " (epoch " + std::to_string(epoch) + ")" : what),
        epoch_(epoch) {}
  long epoch() const noexcept { return epoch_; }

 private:
  long epoch_;
};

/// Malformed or truncated binary/text input.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// A JSON document failed validation; `path` names the offending field.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Mask has no usable foreground pixels.
class DegenerateMaskError : public Error {
 public:
  using Error::Error;
};

/// Coarse grouping used for exit codes and HTTP statuses.
enum class ErrorClass { input, divergence, internal };

/// Wraps an error raised inside one pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, ErrorClass cls = ErrorClass::internal)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)), class_(cls) {}
  const std::string& stage() const noexcept { return stage_; }
  ErrorClass error_class() const noexcept { return class_; }

 private:
  std::string stage_;
  ErrorClass class_;
};

inline ErrorClass classify(const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->error_class();
  if (dynamic_cast<const DivergenceError*>(&e)) return ErrorClass::divergence;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const SchemaError*>(&e) ||
      dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractViolation*>(&e) ||
      dynamic_cast<const DegenerateMaskError*>(&e))
    return ErrorClass::input;
  return ErrorClass::internal;
}

/// Rethrows `e` as a StageError tagged `stage`, keeping its class. StageErrors pass through.
[[noreturn]] inline void rethrow_in_stage(const std::string& stage, const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) throw *s;
  throw StageError(stage, e.what(), classify(e));
}

}  // namespace inrprop

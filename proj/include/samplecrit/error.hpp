#pragma once

#include <stdexcept>
#include <string>

namespace samplecrit {

/// Base error for everything thrown by the library. The message is the
/// user-facing text; callers such as the CLI map subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Missing or malformed input data (files, configs, corpora).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long epoch, long batch)
      : Error(what), epoch_(epoch), batch_(batch) {}
  long epoch() const { return epoch_; }
  long batch() const { return batch_; }

 private:
  long epoch_;
  long batch_;
};

}  // namespace samplecrit

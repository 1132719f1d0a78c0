#pragma once

#include <stdexcept>
#include <string>

namespace folk {

// Base of every exception the toolkit throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SizeUnsupported : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Bad or incomplete configuration. `key_path` names the offending key
// (e.g. "trainer.base_lr") when one is known.
class ConfigError : public Error {
 public:
  ConfigError(std::string key_path, const std::string& what)
      : Error(key_path.empty() ? what : key_path + ": " + what), key_path_(std::move(key_path)) {}
  explicit ConfigError(const std::string& what) : ConfigError("", what) {}
  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Training hit a non-finite value.
class NumericalAbort : public Error {
 public:
  NumericalAbort(long long batch_index, const std::string& what)
      : Error(what), batch_index_(batch_index) {}
  long long batch_index() const noexcept { return batch_index_; }

 private:
  long long batch_index_;
};

}  // namespace folk

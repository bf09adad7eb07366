#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ccrec {

// Error categories map one-to-one onto CLI exit codes and onto the
// machine-parsable "error: <category>: <message>" line printed on stderr.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& msg)
      : std::runtime_error(msg), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension_error", m) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric_error", m) {}
};

struct DataError : Error {
  explicit DataError(const std::string& m) : Error("data_error", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io_error", m) {}
};

struct PrereqError : Error {
  explicit PrereqError(const std::string& m) : Error("missing_prerequisite", m) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error("contract_violation", m) {}
};

int exit_code_for(const std::string& category);

}  // namespace ccrec

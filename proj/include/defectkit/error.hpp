// SPDX-License-Identifier: Apache-2.0
//
// Error types shared by every module. The category decides the CLI exit code.

#pragma once

#include <stdexcept>
#include <string>

namespace defectkit {

enum class ErrorCategory {
  Usage = 1,
  Data = 2,
  Adapter = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message),
        category_(category),
        module_(std::move(module)) {}

  ErrorCategory category() const noexcept { return category_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorCategory category_;
  std::string module_;
};

class UsageError : public Error {
 public:
  UsageError(std::string module, const std::string& message)
      : Error(ErrorCategory::Usage, std::move(module), message) {}
};

class DataError : public Error {
 public:
  DataError(std::string module, const std::string& message)
      : Error(ErrorCategory::Data, std::move(module), message) {}
};

class AdapterError : public Error {
 public:
  AdapterError(std::string module, const std::string& message)
      : Error(ErrorCategory::Adapter, std::move(module), message) {}
};

}  // namespace defectkit

#pragma once

#include <stdexcept>
#include <string>

namespace surf {

// Base error carrying the name of the module that raised it; the CLI maps
// ValidationError/ParseError to exit code 1 and everything else to 2.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  ParseError(std::string module, const std::string& what, std::size_t line)
      : ValidationError(std::move(module), "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Raised for numerical failures: non-finite losses, broken bracketing, etc.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace surf

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace activeiter {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input line. line() is 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct SchemaError : Error { using Error::Error; };
struct CardinalityError : Error { using Error::Error; };
struct DuplicateLinkError : Error { using Error::Error; };
struct IncompatiblePathsError : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct ConstraintError : Error { using Error::Error; };
struct BudgetExhausted : Error { using Error::Error; };
struct UnknownLinkError : Error { using Error::Error; };
struct RepeatedQueryError : Error { using Error::Error; };
struct OracleUnavailable : Error { using Error::Error; };
struct InsufficientDataError : Error { using Error::Error; };

}  // namespace activeiter

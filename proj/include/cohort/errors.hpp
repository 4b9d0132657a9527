#pragma once

#include <stdexcept>
#include <string>

namespace cohort {

/// Input violates a documented precondition (shape, range, population size).
class ValidationError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
   public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what),
          line_(line) {}
    explicit ParseError(const std::string& what)
        : std::runtime_error(what), line_(0) {}
    std::size_t line() const { return line_; }

   private:
    std::size_t line_;
};

class LookupError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered. `module` names the stage that produced it.
class NumericError : public std::runtime_error {
   public:
    NumericError(const std::string& module, const std::string& what)
        : std::runtime_error(module + ": " + what), module_(module) {}
    const std::string& module() const { return module_; }

   private:
    std::string module_;
};

class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class RegistrationError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace cohort

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace coevo {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidSpaceError : public Error {
public:
    explicit InvalidSpaceError(std::vector<std::string> violations);
    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    std::vector<std::string> violations_;
};

class InvalidChromosomeError : public Error { using Error::Error; };
class InvalidBlockError : public Error { using Error::Error; };
class MergeError : public Error { using Error::Error; };
class InvalidOperandError : public Error { using Error::Error; };
class PreconditionError : public Error { using Error::Error; };
class UndefinedDiversityError : public Error { using Error::Error; };

/// GP factorization failed even after maximal jitter.
class SurrogateDegenerateError : public Error { using Error::Error; };

class EvaluationError : public Error {
public:
    enum class Kind { timeout, malformed_response, out_of_range, missing_architecture, process_failure };
    EvaluationError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class ProtocolError : public Error { using Error::Error; };
class TransportError : public Error { using Error::Error; };

class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    std::vector<std::string> problems_;
};

class CheckpointError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };

}  // namespace coevo

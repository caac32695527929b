#pragma once

#include <stdexcept>
#include <string>

namespace wscurate {

/// Base class for every error raised by the curation toolkit. `kind()` is the
/// stable machine-readable tag that ends up in the CLI's error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class IoError : public Error {
public:
    IoError(const std::string& message, std::string path)
        : Error("io_error", message), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Malformed input text. `line()` is 1-based, 0 when not line oriented.
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::size_t line = 0)
        : Error("parse_error", message), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& message) : Error("validation_error", message) {}
};

class AlignmentError : public Error {
public:
    explicit AlignmentError(const std::string& message) : Error("alignment_error", message) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& message) : Error("domain_error", message) {}
};

class DegenerateTripletError : public Error {
public:
    DegenerateTripletError(const std::string& message, std::size_t k, std::size_t l)
        : Error("degenerate_triplet", message), k_(k), l_(l) {}
    std::size_t first() const noexcept { return k_; }
    std::size_t second() const noexcept { return l_; }

private:
    std::size_t k_, l_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error("config_error", message) {}
};

} // namespace wscurate

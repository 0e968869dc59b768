#pragma once

#include <stdexcept>
#include <string>

namespace moregan {

/// Bad shapes, out-of-range arguments, unknown switches.
class InvalidArgument : public std::invalid_argument {
public:
    explicit InvalidArgument(const std::string& what) : std::invalid_argument(what) {}
};

/// Input violates a numeric precondition (e.g. a vanishing denominator).
class DegenerateInput : public std::domain_error {
public:
    DegenerateInput(const std::string& what, int row, int col)
        : std::domain_error(what), row_(row), col_(col) {}
    int row() const { return row_; }
    int col() const { return col_; }

private:
    int row_;
    int col_;
};

class IoError : public std::runtime_error {
public:
    IoError(const std::string& what, std::string path)
        : std::runtime_error(what + ": " + path), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss.
class NumericAbort : public std::runtime_error {
public:
    explicit NumericAbort(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace moregan

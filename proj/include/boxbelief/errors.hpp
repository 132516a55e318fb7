#pragma once

#include <stdexcept>
#include <string>

namespace boxbelief {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Corner coordinates do not describe a yaw-only cuboid.
class NotACuboid : public Error {
public:
    NotACuboid(const std::string& what, double worst_deviation)
        : Error(what + " (worst deviation " + std::to_string(worst_deviation) + " m)"),
          worst_deviation_(worst_deviation) {}

    [[nodiscard]] double worst_deviation() const noexcept { return worst_deviation_; }

private:
    double worst_deviation_;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

class DegenerateGeometry : public Error {
public:
    using Error::Error;
};

class EmptyCloud : public Error {
public:
    using Error::Error;
};

/// All corners carry the same ensemble variance, so no reference corner exists.
class DegenerateRelativeUncertainty : public Error {
public:
    using Error::Error;
};

class DegenerateLabel : public Error {
public:
    using Error::Error;
};

/// Malformed text input. line() is 1-based, 0 when not tied to a line.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

}  // namespace boxbelief

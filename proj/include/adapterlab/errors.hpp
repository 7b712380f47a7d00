#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adapterlab {

// Operand shapes do not line up.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A documented precondition on scalar arguments is violated (rank > d, p <= 1/2, ...).
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

// Malformed IDX files and checkpoints.
class FormatError : public std::runtime_error {
public:
    enum class Kind {
        BadMagic,
        Truncated,
        CountMismatch,
        LabelOutOfRange,
        VersionMismatch,
        CorruptHeader,
        ShapeMismatch,
        Io,
    };

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

// Config file / override problems. line is 1-based, 0 when not tied to a file line.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& what, std::size_t line = 0)
        : std::invalid_argument(line ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace adapterlab

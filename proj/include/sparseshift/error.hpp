#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sparseshift {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A tensor shape did not match what a layer expects.
class ShapeError : public Error {
public:
    ShapeError(std::size_t node, const std::string& what)
        : Error("node " + std::to_string(node) + ": " + what), node_(node) {}

    std::size_t node() const noexcept { return node_; }

private:
    std::size_t node_;
};

/// Malformed serialized data. Carries the byte offset at which decoding failed.
class FormatError : public Error {
public:
    FormatError(std::size_t offset, const std::string& what)
        : Error("offset " + std::to_string(offset) + ": " + what), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// The model graph is not shaped the way an operation requires.
class StructureError : public Error {
public:
    using Error::Error;
};

/// Pruning would remove every channel of a layer.
class CollapseError : public Error {
public:
    explicit CollapseError(std::size_t node)
        : Error("layer collapse: every output channel of node " + std::to_string(node) + " is zero"),
          node_(node) {}

    std::size_t node() const noexcept { return node_; }

private:
    std::size_t node_;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
public:
    explicit DivergenceError(std::size_t epoch)
        : Error("training diverged at epoch " + std::to_string(epoch)), epoch_(epoch) {}

    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

/// A portfolio entry failed its checksum or could not be inflated.
class CorruptPackageError : public Error {
public:
    using Error::Error;
};

/// Text input (CSV trace, config) could not be parsed. `line` is 1-based.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace sparseshift

#pragma once

#include <stdexcept>
#include <string>

namespace lpegn {

// Shape or dimension disagreement between tensors/axes.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Bad caller-supplied value (unknown node, label out of range, ...).
struct InputError : std::invalid_argument {
  explicit InputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// API misuse (non-scalar loss, exhaustive oracle beyond its size limit, ...).
struct UsageError : std::logic_error {
  explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

// Missing or unreadable input file.
struct LoadError : std::runtime_error {
  explicit LoadError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file content.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lpegn

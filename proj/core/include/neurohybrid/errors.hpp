#pragma once

#include <stdexcept>
#include <string>

namespace neurohybrid {

// Exception taxonomy shared by the library and the CLI exit-code mapping.

// Bad command/config usage. CLI exit code 1.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

// Filesystem or stream failure. CLI exit code 2.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

// File exists but its content is malformed. CLI exit code 2.
struct FormatError : IoError {
  explicit FormatError(const std::string& m) : IoError(m) {}
};

// A referenced run artifact does not exist. CLI exit code 3.
struct MissingArtifactError : std::runtime_error {
  explicit MissingArtifactError(const std::string& m) : std::runtime_error(m) {}
};

// Unknown model kind in a config or on the command line. CLI exit code 4.
struct InvalidModelKindError : std::runtime_error {
  explicit InvalidModelKindError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace neurohybrid

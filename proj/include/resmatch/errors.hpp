#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace resmatch {

// Invalid arguments are reported with std::invalid_argument. The types below
// cover failures that carry extra context.

class IoError : public std::runtime_error {
public:
    IoError(const std::filesystem::path& path, const std::string& what)
        : std::runtime_error(path.string() + ": " + what), path_(path) {}

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

class FormatError : public IoError {
public:
    using IoError::IoError;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateFitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace resmatch

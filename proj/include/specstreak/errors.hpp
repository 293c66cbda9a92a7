#pragma once

#include <stdexcept>
#include <string>

namespace specstreak {

// Bad user-supplied configuration or arguments; the CLI maps this to exit 2.
struct config_error : std::invalid_argument {
    explicit config_error(const std::string& what) : std::invalid_argument(what) {}
};

// Filesystem trouble (missing file, unwritable path, malformed model file);
// the CLI maps this to exit 3.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace specstreak

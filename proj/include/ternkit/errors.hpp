#pragma once

#include <stdexcept>
#include <string>

namespace ternkit {

// Packed data contains a bit pattern outside the ternary encoding.
struct corrupt_data_error : std::runtime_error {
    explicit corrupt_data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File could not be opened, read or written.
struct file_error : std::runtime_error {
    explicit file_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File opened fine but its contents do not follow the container layout
// (bad magic, unsupported version, truncated payload, inconsistent records).
struct format_error : std::runtime_error {
    explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ternkit

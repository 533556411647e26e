#pragma once

#include <stdexcept>
#include <string>

namespace pctrees {

// Error categories, matching the machine-parseable categories the CLI
// reports and the status codes of the C API.
enum class ErrorCategory {
    IO = 1,      // file open/read/write failures
    Format = 2,  // malformed input data (CSV, checkpoints, headers)
    Shape = 3,   // geometric/tensor shape violations (empty cloud, mismatch)
    Config = 4,  // invalid parameter values or unknown configuration keys
};

const char* category_name(ErrorCategory c);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

// Throw helpers for the error kinds named across the library.
[[noreturn]] void throw_io(const std::string& msg);
[[noreturn]] void throw_format(const std::string& msg);
[[noreturn]] void throw_shape(const std::string& msg);
[[noreturn]] void throw_config(const std::string& msg);

[[noreturn]] inline void throw_empty_cloud(const std::string& where) {
    throw_shape("EmptyCloud: " + where + " requires a nonempty point cloud");
}

}  // namespace pctrees

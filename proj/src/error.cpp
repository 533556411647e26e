#include "pctrees/error.hpp"

namespace pctrees {

const char* category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::IO: return "IO";
        case ErrorCategory::Format: return "Format";
        case ErrorCategory::Shape: return "Shape";
        case ErrorCategory::Config: return "Config";
    }
    return "Unknown";
}

void throw_io(const std::string& msg) { throw Error(ErrorCategory::IO, msg); }
void throw_format(const std::string& msg) { throw Error(ErrorCategory::Format, msg); }
void throw_shape(const std::string& msg) { throw Error(ErrorCategory::Shape, msg); }
void throw_config(const std::string& msg) { throw Error(ErrorCategory::Config, msg); }

}  // namespace pctrees

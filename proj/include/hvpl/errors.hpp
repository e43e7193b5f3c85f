#pragma once

#include <stdexcept>
#include <string>

namespace hvpl {

// Error taxonomy. The CLI maps NumericError to exit code 2 and every other
// validation/state failure to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};
struct UsageError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct CoverageError : Error {
    using Error::Error;
};
struct StateError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct DegenerateInputError : Error {
    using Error::Error;
};
struct ConnectivityError : Error {
    using Error::Error;
};
struct StructureError : Error {
    using Error::Error;
};
struct ParameterizationError : Error {
    using Error::Error;
};

inline void check_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace hvpl

#ifndef ZSRL_ERRORS_HPP
#define ZSRL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace zsrl {

// Error taxonomy used across the library. Each maps to a stable CLI exit
// code (see tools/): ConfigError/ParseError -> 2, DataError -> 3,
// NumericError -> 4, ShapeError at the eval boundary -> 5.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SamplingError : std::runtime_error {
    explicit SamplingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Item from the wrong domain (e.g. a sketch fed to a photo-only stage).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf encountered where finite values are required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct KeyError : std::runtime_error {
    explicit KeyError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EvalError : std::runtime_error {
    explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace zsrl

#endif  // ZSRL_ERRORS_HPP

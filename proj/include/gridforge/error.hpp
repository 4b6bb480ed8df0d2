#pragma once

#include <stdexcept>
#include <string>

namespace gridforge {

// Base error for everything thrown by the library. Subtypes name the failed
// contract so callers (and the CLI exit-code mapping) can dispatch on them.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct SizeError : Error { using Error::Error; };
struct RangeError : Error { using Error::Error; };
struct ParamError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct SimulationError : Error { using Error::Error; };
struct CalibrationError : Error { using Error::Error; };
struct SpecError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

} // namespace gridforge

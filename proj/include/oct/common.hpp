#pragma once

#include <stdexcept>
#include <string>

namespace oct {

inline constexpr const char* kToolVersion = "octpipe 0.1.0";

// Error taxonomy mapped to CLI exit codes: ConfigError -> 2, DataError -> 3,
// TrainError -> 4. Anything else is a plain failure.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace oct

#define OCT_REQUIRE(cond, msg)                      \
    do {                                            \
        if (!(cond)) throw ::oct::DataError(msg);   \
    } while (0)

#define OCT_REQUIRE_CFG(cond, msg)                  \
    do {                                            \
        if (!(cond)) throw ::oct::ConfigError(msg); \
    } while (0)

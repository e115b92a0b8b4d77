#pragma once

#include <stdexcept>
#include <string>

namespace crossconst {

// Exit-code mapping used by the CLI: usage 1, data 2, invariant 3.
// ConfigError is a usage-class failure.

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvariantError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace crossconst

#pragma once

#include <stdexcept>
#include <string>

namespace vat {

// Error taxonomy shared by the library and the CLI exit-code contract:
// config errors -> exit 2, format errors -> exit 3, contract/dimension
// errors -> exit 4.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
    long long offset = -1;
    explicit FormatError(const std::string& msg, long long at = -1)
        : std::runtime_error(at >= 0 ? msg + " (byte offset " + std::to_string(at) + ")" : msg),
          offset(at) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : ContractError {
    explicit DimensionError(const std::string& msg) : ContractError(msg) {}
};

struct IndexError : ContractError {
    explicit IndexError(const std::string& msg) : ContractError(msg) {}
};

}  // namespace vat

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace blalm {

// A caller broke an operation's preconditions (shape mismatch, wrong rank, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid configuration values (odd head dim, kernel < 1, unknown config key, ...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad user-supplied data (token id out of range, malformed file, ...).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values showed up where the math must stay finite.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::size_t index)
        : std::runtime_error(what + " (index " + std::to_string(index) + ")"), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

}  // namespace blalm

#pragma once

#include <stdexcept>
#include <string>

namespace anl {

// Exit-code mapping used by the CLI: UsageError -> 1, DataError -> 2,
// NumericalError -> 3.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace anl

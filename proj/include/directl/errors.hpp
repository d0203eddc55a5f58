#pragma once

#include <stdexcept>
#include <string>

namespace directl {

/// Malformed or inconsistent input data (files, caches, scenes).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments from a caller or the command line.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace directl

#pragma once

#include <stdexcept>
#include <string>

namespace redund {

/// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range user input (configs, CLI values, spec files).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// An analytic path was requested for a (dependence, model, d) combination
/// that has no closed form.
class UnsupportedCombination : public Error {
public:
    using Error::Error;
};

/// Internal state violated an invariant; the run cannot continue.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

} // namespace redund

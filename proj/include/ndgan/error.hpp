#pragma once

#include <stdexcept>
#include <string>

namespace ndgan {

// Base for every error the library raises. The CLI maps the subclasses onto
// exit codes (config/input -> 2, numeric/runtime -> 3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class InfeasibleError : public Error {
public:
    using Error::Error;
};

// Raised by training loops when the divergence detector fires. The last good
// checkpoint is left on disk.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long long step) : Error(what), step_(step) {}
    long long step() const noexcept { return step_; }

private:
    long long step_;
};

}  // namespace ndgan

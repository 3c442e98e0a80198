#pragma once

#include <stdexcept>
#include <string>

namespace handy {

/// Invalid or inconsistent configuration (bad bounds, non-finite derived
/// coefficients, unsupported dimensions, ...).
class ConfigurationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mismatched series, tensor or matrix dimensions.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A request outside the span covered by a trajectory.
class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Integration produced a non-finite value.
class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, double time)
        : std::runtime_error(what), time_(time) {}

    double time() const noexcept { return time_; }

private:
    double time_;
};

}  // namespace handy

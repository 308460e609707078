#pragma once

#include <stdexcept>
#include <string>

namespace pdt {

// Raised for malformed arguments: wrong dimensions, non-unit directions, bad config values.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised when an input sits on a singular set (zero-norm rotation, constant ranks).
struct DegenerateInput : std::domain_error {
  using std::domain_error::domain_error;
};

// Raised when a metric is requested from a trial that did not complete.
struct MetricUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pdt

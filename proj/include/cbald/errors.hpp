#pragma once

#include <stdexcept>
#include <string>

namespace cbald {

// Invalid user-supplied configuration (sizes, budgets, unknown kinds).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file (bad row, bad column, wrong schema).
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated call precondition (empty dataset, bad argument value).
struct precondition_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numerical failure (non-PD Gram matrix, diverged training).
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operation on an object in the wrong state (e.g. predicting with an
// unfitted model).
struct state_error : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace cbald

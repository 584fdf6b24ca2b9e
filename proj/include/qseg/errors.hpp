#pragma once

#include <stdexcept>
#include <string>

namespace qseg {

// Bad arguments / configuration supplied by the caller.
struct argument_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Problem exceeds a hard capacity limit (e.g. exhaustive solve size).
struct capacity_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Inconsistent or degenerate model state (all-zero likelihoods, too few
// distinct intensities, ...).
struct model_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File could not be read or written.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File exists but its contents are malformed.
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace qseg

#pragma once

#include <stdexcept>
#include <string>

namespace mfgm {

/// Scenario or input data violates a schema rule or invariant.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical stage failed: singular linearizer, non-convergence, under-resolved grid.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mfgm

#pragma once

#include <stdexcept>
#include <string>

namespace otflow {

// Shape/dimension disagreement between operands. Message names both shapes.
struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// API precondition violated by the caller (non-scalar loss, empty list, ...).
struct contract_error : std::logic_error {
    using std::logic_error::logic_error;
};

// Invalid configuration value or unknown configuration key.
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numeric-domain failure at runtime (nonpositive Sinkhorn input, divergence, ...).
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace otflow

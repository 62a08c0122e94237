#pragma once

#include <cstdint>

#include "flsim/parameter_vector.hpp"

namespace flsim {

// A parameter delta plus the datapoint count the client claims for it. The
// count weights the delta during aggregation; it is self-reported and a
// malicious client may set it freely.
struct ClientUpdate {
    ParameterVector delta;
    std::int64_t reported_count = 0;
};

}  // namespace flsim

#pragma once

#include <vector>

namespace relforge {

// Discounted returns over one update window: R_t = r_t + gamma R_{t+1},
// seeded past the end by the bootstrap value (0 at a terminal state).
std::vector<double> n_step_returns(const std::vector<double>& rewards, double gamma,
                                   double bootstrap);

} // namespace relforge

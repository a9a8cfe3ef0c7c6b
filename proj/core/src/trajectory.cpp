#include "relforge/trajectory.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace relforge {

std::vector<double> n_step_returns(const std::vector<double>& rewards, double gamma,
                                   double bootstrap) {
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw std::invalid_argument("gamma must lie in [0, 1), got " + std::to_string(gamma));
    if (!std::isfinite(bootstrap)) throw std::invalid_argument("non-finite bootstrap value");
    for (double r : rewards)
        if (!std::isfinite(r)) throw std::invalid_argument("non-finite reward in window");

    std::vector<double> returns(rewards.size());
    double acc = bootstrap;
    for (size_t t = rewards.size(); t-- > 0;) {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    return returns;
}

} // namespace relforge

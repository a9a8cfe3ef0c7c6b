#pragma once

#include "relforge/param_store.hpp"

#include <functional>
#include <string>

namespace relforge {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares analytic gradients against central differences.
// `loss_fn` must run a full forward pass and accumulate grads into `store`;
// it is also used (grads discarded) to probe perturbed parameters.
// Relative error uses a unit floor: |a - n| / max(1, |a|, |n|).
GradCheckResult grad_check(ParamStore& store, const std::function<double()>& loss_fn,
                           double eps = 1e-5);

} // namespace relforge

#include "relforge/grad_check.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace relforge {

GradCheckResult grad_check(ParamStore& store, const std::function<double()>& loss_fn,
                           double eps) {
    store.zero_grads();
    const double base = loss_fn();
    if (!std::isfinite(base)) throw std::runtime_error("grad_check: non-finite loss");

    std::vector<std::vector<double>> analytic;
    store.for_each([&](const std::string&, Tensor& t) {
        t.ensure_grad();
        analytic.push_back(t.grad_values());
    });

    GradCheckResult res;
    size_t entry = 0;
    store.for_each([&](const std::string& name, Tensor& t) {
        const auto& a = analytic[entry++];
        for (int64_t i = 0; i < t.numel(); ++i) {
            if (!std::isfinite(a[static_cast<size_t>(i)]))
                throw std::runtime_error("grad_check: non-finite analytic gradient in '" + name +
                                         "'");
            const double saved = t[i];
            t[i] = saved + eps;
            store.zero_grads();
            const double up = loss_fn();
            t[i] = saved - eps;
            store.zero_grads();
            const double down = loss_fn();
            t[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double an = a[static_cast<size_t>(i)];
            const double denom = std::max({1.0, std::fabs(an), std::fabs(numeric)});
            const double rel = std::fabs(an - numeric) / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = name;
                res.worst_index = i;
                res.analytic = an;
                res.numeric = numeric;
            }
        }
    });
    store.zero_grads();
    return res;
}

} // namespace relforge

#pragma once

// Central finite-difference oracle shared by the unit tests and the
// acceptance gate. Rebuilds the graph from scratch for every probe so any
// cached forward state is recomputed from the perturbed parameter.

#include <functional>
#include <limits>
#include <vector>

#include "lmpforge/autodiff.hpp"

namespace lmpforge::testing {

struct GradCheckResult {
    double max_err = 0.0;   // relative where magnitudes >= 1e-6, absolute below
    int64_t checked = 0;
};

/// Probes every element at each step size and scores it by its best match.
/// Piecewise-linear activations put kinks arbitrarily close to the evaluation
/// point; a central difference that straddles one averages the two slopes and
/// reports a bogus mismatch that disappears once the step drops below the
/// distance to the kink. Roundoff noise works the opposite way, so a genuine
/// gradient bug is exactly a mismatch that persists across all steps.
inline GradCheckResult grad_check_multi(const std::function<VarId(Graph&)>& build,
                                        const std::vector<Param*>& params,
                                        const std::vector<double>& steps) {
    std::vector<Tensor> analytic;
    {
        Graph g;
        VarId root = build(g);
        for (Param* p : params) p->zero_grad();
        g.backward(root);
        for (Param* p : params) analytic.push_back(p->grad);
    }
    auto eval = [&]() {
        Graph g;
        return g.val(build(g)).data()[0];
    };
    GradCheckResult res;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        for (int64_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value.data()[i];
            const double a = analytic[pi].data()[i];
            double best = std::numeric_limits<double>::infinity();
            for (double step : steps) {
                p->value.data()[i] = saved + step;
                const double f_plus = eval();
                p->value.data()[i] = saved - step;
                const double f_minus = eval();
                p->value.data()[i] = saved;
                const double fd = (f_plus - f_minus) / (2.0 * step);
                const double mag = std::max(std::fabs(a), std::fabs(fd));
                const double err = mag < 1e-6 ? std::fabs(a - fd) : std::fabs(a - fd) / mag;
                best = std::min(best, err);
            }
            res.max_err = std::max(res.max_err, best);
            ++res.checked;
        }
    }
    return res;
}

inline GradCheckResult grad_check(const std::function<VarId(Graph&)>& build,
                                  const std::vector<Param*>& params, double step = 1e-4) {
    return grad_check_multi(build, params, {step});
}

}  // namespace lmpforge::testing

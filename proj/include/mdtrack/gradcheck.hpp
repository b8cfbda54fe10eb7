#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mdtrack/ops.hpp"

namespace mdtrack {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    std::int64_t elements_checked = 0;
};

// Compares recorded gradients against central finite differences.
//
// `build_loss` must construct the scalar loss on the graph it is given,
// reading the current values of `params`; it must be deterministic, so two
// calls with identical param values produce identical losses. Each listed
// param is perturbed element by element (all elements when
// max_elements_per_param == 0, otherwise a deterministic subsample) and the
// difference quotient is compared with the gradient recorded by one
// forward/backward pass. Relative error uses a 1e-5 denominator floor so
// finite-difference noise on near-zero gradients does not register.
//
// Throws DomainError if any evaluation yields a non-finite loss.
GradCheckResult grad_check(const std::function<Value(Graph&)>& build_loss,
                           const std::vector<Param*>& params, double step = 1e-5,
                           std::int64_t max_elements_per_param = 0);

}  // namespace mdtrack

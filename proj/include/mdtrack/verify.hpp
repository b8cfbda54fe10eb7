#pragma once

#include <ostream>

#include "mdtrack/model.hpp"

namespace mdtrack {

// Numerical verification harness behind `verify` and the acceptance suite.
// Each check pins its tolerance in code; a check passes iff value <= tol
// (or the stated predicate holds for non-numeric checks).

struct CheckResult {
    std::string name;
    bool pass = false;
    double value = 0;
    double tolerance = 0;
    std::string detail;
};

std::vector<CheckResult> verify_numerics();  // per-op gradients vs finite differences
std::vector<CheckResult> verify_temporal();  // scan/recurrence oracle, decoupling isolation
std::vector<CheckResult> verify_fusion();    // routing contract, fusion closed forms
std::vector<CheckResult> verify_head();      // giou/decode/focal properties
std::vector<CheckResult> verify_model();     // full desk-scale model gradient check (f64)

// module: all | numerics | temporal | fusion | head
std::vector<CheckResult> run_verify(const std::string& module);

bool all_passed(const std::vector<CheckResult>& results);
void print_results(const std::vector<CheckResult>& results, std::ostream& os);

}  // namespace mdtrack

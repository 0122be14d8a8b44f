#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace otlm {

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    double limit = 0.0;
    bool passed() const { return max_rel_error <= limit; }
};

// Finite-difference verification of every kernel, cumax, one full
// ordered-attention block, and the tiny end-to-end LM loss. Wide mode,
// eps 1e-5, limit 1e-4 per check.
std::vector<GradCheckResult> run_gradcheck_suite();

// Prints one line per check; returns true iff all pass.
bool report_gradcheck_suite(std::ostream& out);

} // namespace otlm

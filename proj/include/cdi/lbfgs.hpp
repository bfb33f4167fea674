#pragma once

#include <functional>
#include <vector>

namespace cdi {

// Objective callback: fills grad (same size as x) and returns f(x).
using LbfgsObjective =
    std::function<double(const std::vector<double>& x, std::vector<double>& grad)>;

struct LbfgsOptions {
    int history = 10;
    double wolfe_c1 = 1e-4;  // sufficient decrease
    double wolfe_c2 = 0.9;   // curvature
    int max_line_search = 30;
    double grad_tol = 1e-10;  // stop when max|g| falls below
};

struct LbfgsResult {
    std::vector<double> x;  // best iterate seen
    double fx = 0.0;        // objective at x
    std::vector<double> trace;  // accepted objective values, trace[0] = f(x0)
    int iterations = 0;         // accepted outer iterations
    bool line_search_failed = false;
    bool converged = false;  // gradient tolerance reached
};

// Limited-memory BFGS with strong Wolfe line search (bracket + zoom with
// cubic interpolation). At most `max_steps` outer iterations; the objective
// is non-increasing across accepted iterates and the best iterate seen is
// what comes back, even if the line search eventually fails.
LbfgsResult lbfgs_minimize(const LbfgsObjective& objective,
                           const std::vector<double>& x0, int max_steps,
                           const LbfgsOptions& opts = {});

}  // namespace cdi

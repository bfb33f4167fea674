#include "cdi/lbfgs.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

namespace cdi {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

struct Pair {
    std::vector<double> s, y;
    double rho;
};

// Cubic minimizer of the interpolant through (a, fa, ga) and (b, fb, gb);
// falls back to bisection when the cubic is degenerate.
double cubic_min(double a, double fa, double ga, double b, double fb, double gb) {
    const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - ga * gb;
    if (disc < 0.0) return 0.5 * (a + b);
    const double d2 = std::sqrt(disc) * (b > a ? 1.0 : -1.0);
    const double denom = gb - ga + 2.0 * d2;
    if (denom == 0.0) return 0.5 * (a + b);
    double t = b - (b - a) * (gb + d2 - d1) / denom;
    const double lo = std::min(a, b), hi = std::max(a, b);
    if (!(t > lo && t < hi)) t = 0.5 * (a + b);
    // keep strictly interior
    const double margin = 1e-3 * (hi - lo);
    return std::min(std::max(t, lo + margin), hi - margin);
}

}  // namespace

LbfgsResult lbfgs_minimize(const LbfgsObjective& objective,
                           const std::vector<double>& x0, int max_steps,
                           const LbfgsOptions& opts) {
    if (max_steps < 0) throw std::invalid_argument("lbfgs_minimize: max_steps < 0");
    const size_t n = x0.size();

    LbfgsResult res;
    res.x = x0;
    std::vector<double> g(n, 0.0);
    res.fx = objective(res.x, g);
    if (!std::isfinite(res.fx))
        throw std::invalid_argument("lbfgs_minimize: objective not finite at x0");
    res.trace.push_back(res.fx);

    std::vector<double> x = res.x;
    double fx = res.fx;
    std::deque<Pair> hist;
    std::vector<double> d(n), x_new(n), g_new(n), q(n);

    for (int iter = 0; iter < max_steps; ++iter) {
        if (max_abs(g) <= opts.grad_tol) {
            res.converged = true;
            break;
        }

        // two-loop recursion
        q = g;
        std::vector<double> alpha(hist.size());
        for (size_t i = hist.size(); i-- > 0;) {
            alpha[i] = hist[i].rho * dot(hist[i].s, q);
            for (size_t j = 0; j < n; ++j) q[j] -= alpha[i] * hist[i].y[j];
        }
        double gamma = 1.0;
        if (!hist.empty()) {
            const auto& last = hist.back();
            gamma = dot(last.s, last.y) / dot(last.y, last.y);
        }
        for (double& v : q) v *= gamma;
        for (size_t i = 0; i < hist.size(); ++i) {
            const double beta = hist[i].rho * dot(hist[i].y, q);
            for (size_t j = 0; j < n; ++j) q[j] += (alpha[i] - beta) * hist[i].s[j];
        }
        for (size_t j = 0; j < n; ++j) d[j] = -q[j];

        double dg0 = dot(d, g);
        if (dg0 >= 0.0) {  // not a descent direction; restart from steepest descent
            hist.clear();
            for (size_t j = 0; j < n; ++j) d[j] = -g[j];
            dg0 = dot(d, g);
            if (dg0 >= 0.0) break;  // zero gradient
        }

        // strong Wolfe line search (Nocedal & Wright alg. 3.5/3.6)
        const double f0 = fx;
        auto eval = [&](double step, double& f_out, double& dg_out) {
            for (size_t j = 0; j < n; ++j) x_new[j] = x[j] + step * d[j];
            f_out = objective(x_new, g_new);
            dg_out = dot(d, g_new);
        };

        double step = 1.0;
        if (hist.empty()) {
            // first iteration: scale to a unit-ish step in x space
            const double gnorm = std::sqrt(dot(g, g));
            if (gnorm > 1.0) step = 1.0 / gnorm;
        }

        double step_prev = 0.0, f_prev = f0, dg_prev = dg0;
        double step_lo = 0.0, f_lo = f0, dg_lo = dg0;
        double step_hi = 0.0, f_hi = 0.0, dg_hi = 0.0;
        bool bracketed = false, found = false;
        double f_acc = 0.0, dg_acc = 0.0, step_acc = 0.0;
        const double step_max = 1e8;

        int ls = 0;
        for (; ls < opts.max_line_search; ++ls) {
            double f_t, dg_t;
            eval(step, f_t, dg_t);
            if (!std::isfinite(f_t)) {  // shrink hard on overflow
                step = 0.5 * (step_prev + step);
                continue;
            }
            if (f_t > f0 + opts.wolfe_c1 * step * dg0 || (ls > 0 && f_t >= f_prev)) {
                step_lo = step_prev; f_lo = f_prev; dg_lo = dg_prev;
                step_hi = step; f_hi = f_t; dg_hi = dg_t;
                bracketed = true;
                break;
            }
            if (std::fabs(dg_t) <= -opts.wolfe_c2 * dg0) {
                found = true;
                step_acc = step; f_acc = f_t; dg_acc = dg_t;
                break;
            }
            if (dg_t >= 0.0) {
                step_lo = step; f_lo = f_t; dg_lo = dg_t;
                step_hi = step_prev; f_hi = f_prev; dg_hi = dg_prev;
                bracketed = true;
                break;
            }
            step_prev = step; f_prev = f_t; dg_prev = dg_t;
            step = std::min(2.0 * step, step_max);
            if (step >= step_max) break;
        }

        if (bracketed && !found) {
            for (; ls < opts.max_line_search; ++ls) {
                const double step_t =
                    cubic_min(step_lo, f_lo, dg_lo, step_hi, f_hi, dg_hi);
                double f_t, dg_t;
                eval(step_t, f_t, dg_t);
                if (!std::isfinite(f_t) || f_t > f0 + opts.wolfe_c1 * step_t * dg0 ||
                    f_t >= f_lo) {
                    step_hi = step_t; f_hi = f_t; dg_hi = dg_t;
                } else {
                    if (std::fabs(dg_t) <= -opts.wolfe_c2 * dg0) {
                        found = true;
                        step_acc = step_t; f_acc = f_t; dg_acc = dg_t;
                        break;
                    }
                    if (dg_t * (step_hi - step_lo) >= 0.0) {
                        step_hi = step_lo; f_hi = f_lo; dg_hi = dg_lo;
                    }
                    step_lo = step_t; f_lo = f_t; dg_lo = dg_t;
                }
                if (std::fabs(step_hi - step_lo) <
                    1e-14 * std::max(1.0, std::fabs(step_hi)))
                    break;
            }
        }

        if (!found && bracketed && f_lo < f0 && step_lo > 0.0) {
            // Wolfe failed but we still have decrease: accept the best
            // bracket endpoint so the iterate never regresses.
            for (size_t j = 0; j < n; ++j) x_new[j] = x[j] + step_lo * d[j];
            double dg_t;
            eval(step_lo, f_acc, dg_t);
            step_acc = step_lo;
            dg_acc = dg_t;
            found = true;
            res.line_search_failed = true;
        }

        if (!found) {
            res.line_search_failed = true;
            break;  // best-so-far already stored in res
        }

        // accept iterate
        for (size_t j = 0; j < n; ++j) x_new[j] = x[j] + step_acc * d[j];
        (void)dg_acc;
        Pair pr;
        pr.s.resize(n);
        pr.y.resize(n);
        for (size_t j = 0; j < n; ++j) {
            pr.s[j] = x_new[j] - x[j];
            pr.y[j] = g_new[j] - g[j];
        }
        const double sy = dot(pr.s, pr.y);
        if (sy > 1e-12) {
            pr.rho = 1.0 / sy;
            hist.push_back(std::move(pr));
            if (static_cast<int>(hist.size()) > opts.history) hist.pop_front();
        }

        x = x_new;
        g = g_new;
        fx = f_acc;
        ++res.iterations;
        res.trace.push_back(fx);
        if (fx <= res.fx) {
            res.fx = fx;
            res.x = x;
        }
    }

    return res;
}

}  // namespace cdi

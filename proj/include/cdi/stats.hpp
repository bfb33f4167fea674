#pragma once

#include <cstdint>
#include <vector>

namespace cdi {

struct TTestResult {
    double t_stat = 0.0;
    double dof = 0.0;
    double p_value = 0.5;  // one-tailed, alternative "mean(a) > mean(b)"
};

// Unequal-variance two-sample t-test with Welch-Satterthwaite degrees of
// freedom. Degenerate inputs (all-constant samples) take a fast path:
// equal means -> p = 0.5 by convention, otherwise p collapses to 0 or 1.
TTestResult welch_ttest_one_tailed(const std::vector<double>& a,
                                   const std::vector<double>& b);

struct VerificationVerdict {
    double mean_p = 1.0;
    double ci_lo = 0.0, ci_hi = 1.0;  // 95% normal-approximation band
    double hmean_p = 1.0;             // diagnostic only, never drives reject
    int trials = 0;
    int n_per_trial = 0;
    double alpha = 0.01;
    bool reject = false;  // mean_p < alpha
    uint64_t seed = 0;
    std::vector<double> trial_p;
};

// The decision layer: `trials` Welch tests on subsets of n_per_trial scores
// sampled without replacement from each side (independently across trials),
// aggregated with an arithmetic mean.
VerificationVerdict cdi_verdict(const std::vector<double>& scores_P,
                                const std::vector<double>& scores_U,
                                int n_per_trial, int trials = 1000,
                                double alpha = 0.01, uint64_t seed = 0);

// Pooled-standard-deviation effect size. Zero pooled variance with unequal
// means returns +/-inf (flagged by the caller via isinf).
double cohens_d(const std::vector<double>& a, const std::vector<double>& b);

struct PowerEstimate {
    double cohens_d = 0.0;
    double power = 0.0;
    double alpha = 0.01;
};

// Power of the one-tailed two-sample t-test at effect size d via the
// noncentral t with noncentrality d*sqrt(n1*n2/(n1+n2)). Equals TPR@FPR=alpha
// of the verdict decision.
PowerEstimate power_at_alpha(double d, int n1, int n2, double alpha = 0.01);

// --- small distribution/test helpers used by guards and reports ---

double student_t_cdf(double t, double dof);

// One-sample Kolmogorov-Smirnov distance of `values` against U[0,1].
double ks_uniform_statistic(std::vector<double> values);

// Asymptotic two-sample KS p-value (used as the P/U distribution-match guard).
double ks_two_sample_pvalue(std::vector<double> a, std::vector<double> b);

double mean_of(const std::vector<double>& v);
double sample_variance(const std::vector<double>& v);  // n-1 denominator

}  // namespace cdi

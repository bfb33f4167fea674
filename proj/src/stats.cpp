#include "cdi/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/non_central_t.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "cdi/rng.hpp"

namespace cdi {

double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean_of: empty vector");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) throw std::invalid_argument("sample_variance: need n >= 2");
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return acc / static_cast<double>(v.size() - 1);
}

double student_t_cdf(double t, double dof) {
    boost::math::students_t_distribution<double> dist(dof);
    return boost::math::cdf(dist, t);
}

TTestResult welch_ttest_one_tailed(const std::vector<double>& a,
                                   const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw std::invalid_argument("welch_ttest: need at least 2 samples per side");
    for (double x : a)
        if (!std::isfinite(x)) throw std::invalid_argument("welch_ttest: non-finite value");
    for (double x : b)
        if (!std::isfinite(x)) throw std::invalid_argument("welch_ttest: non-finite value");

    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double ma = mean_of(a), mb = mean_of(b);
    const double va = sample_variance(a), vb = sample_variance(b);

    TTestResult r;
    if (va == 0.0 && vb == 0.0) {
        // both samples constant
        r.dof = na + nb - 2.0;
        if (ma == mb) {
            r.t_stat = 0.0;
            r.p_value = 0.5;
        } else {
            r.t_stat = (ma > mb) ? std::numeric_limits<double>::infinity()
                                 : -std::numeric_limits<double>::infinity();
            r.p_value = (ma > mb) ? 0.0 : 1.0;
        }
        return r;
    }

    const double se2 = va / na + vb / nb;
    r.t_stat = (ma - mb) / std::sqrt(se2);
    const double num = se2 * se2;
    const double den = (va / na) * (va / na) / (na - 1.0) +
                       (vb / nb) * (vb / nb) / (nb - 1.0);
    r.dof = num / den;
    r.p_value = 1.0 - student_t_cdf(r.t_stat, r.dof);
    return r;
}

VerificationVerdict cdi_verdict(const std::vector<double>& scores_P,
                                const std::vector<double>& scores_U,
                                int n_per_trial, int trials, double alpha,
                                uint64_t seed) {
    if (trials < 1) throw std::invalid_argument("cdi_verdict: trials must be >= 1");
    if (n_per_trial < 2)
        throw std::invalid_argument("cdi_verdict: n_per_trial must be >= 2");
    if (static_cast<size_t>(n_per_trial) > scores_P.size() ||
        static_cast<size_t>(n_per_trial) > scores_U.size())
        throw std::invalid_argument("cdi_verdict: n_per_trial exceeds score pool size");

    VerificationVerdict v;
    v.trials = trials;
    v.n_per_trial = n_per_trial;
    v.alpha = alpha;
    v.seed = seed;
    v.trial_p.reserve(static_cast<size_t>(trials));

    auto subsample = [n_per_trial](const std::vector<double>& pool, Rng& rng) {
        std::vector<size_t> idx(pool.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        std::vector<double> out(static_cast<size_t>(n_per_trial));
        for (int i = 0; i < n_per_trial; ++i) {
            const size_t j = i + rng.below(idx.size() - static_cast<size_t>(i));
            std::swap(idx[static_cast<size_t>(i)], idx[j]);
            out[static_cast<size_t>(i)] = pool[idx[static_cast<size_t>(i)]];
        }
        return out;
    };

    for (int trial = 0; trial < trials; ++trial) {
        Rng rng = derive_rng(seed, "cdi_trial", static_cast<uint64_t>(trial));
        const std::vector<double> sa = subsample(scores_P, rng);
        const std::vector<double> sb = subsample(scores_U, rng);
        v.trial_p.push_back(welch_ttest_one_tailed(sa, sb).p_value);
    }

    v.mean_p = mean_of(v.trial_p);
    double hsum = 0.0;
    for (double p : v.trial_p) hsum += 1.0 / std::max(p, 1e-300);
    v.hmean_p = static_cast<double>(trials) / hsum;

    double sd = 0.0;
    if (trials > 1) sd = std::sqrt(sample_variance(v.trial_p));
    const double half = 1.96 * sd / std::sqrt(static_cast<double>(trials));
    v.ci_lo = std::max(0.0, v.mean_p - half);
    v.ci_hi = std::min(1.0, v.mean_p + half);
    v.reject = v.mean_p < alpha;
    return v;
}

double cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
    const double n1 = static_cast<double>(a.size());
    const double n2 = static_cast<double>(b.size());
    if (n1 + n2 <= 2.0)
        throw std::invalid_argument("cohens_d: need n1 + n2 > 2");
    const double m1 = mean_of(a), m2 = mean_of(b);
    const double v1 = a.size() > 1 ? sample_variance(a) : 0.0;
    const double v2 = b.size() > 1 ? sample_variance(b) : 0.0;
    const double pooled =
        std::sqrt(((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0));
    if (pooled == 0.0) {
        if (m1 == m2) return 0.0;
        return (m1 > m2) ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
    }
    return (m1 - m2) / pooled;
}

PowerEstimate power_at_alpha(double d, int n1, int n2, double alpha) {
    if (n1 < 2 || n2 < 2)
        throw std::invalid_argument("power_at_alpha: need n1, n2 >= 2");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("power_at_alpha: alpha out of (0,1)");
    PowerEstimate pe;
    pe.cohens_d = d;
    pe.alpha = alpha;
    const double dof = static_cast<double>(n1 + n2 - 2);
    const double delta =
        d * std::sqrt(static_cast<double>(n1) * n2 / static_cast<double>(n1 + n2));
    boost::math::students_t_distribution<double> central(dof);
    const double t_crit = boost::math::quantile(central, 1.0 - alpha);
    if (std::isinf(delta)) {
        pe.power = delta > 0 ? 1.0 : 0.0;
        return pe;
    }
    if (delta == 0.0) {
        pe.power = alpha;  // exactly the central tail by construction
        return pe;
    }
    boost::math::non_central_t_distribution<double> nct(dof, delta);
    pe.power = boost::math::cdf(boost::math::complement(nct, t_crit));
    return pe;
}

double ks_uniform_statistic(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("ks_uniform_statistic: empty");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    double d = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        const double cdf = values[i];  // U[0,1]
        d = std::max(d, std::fabs((i + 1.0) / n - cdf));
        d = std::max(d, std::fabs(cdf - static_cast<double>(i) / n));
    }
    return d;
}

namespace {

// Kolmogorov asymptotic survival function.
double kolmogorov_q(double lambda) {
    if (lambda <= 0.0) return 1.0;
    double sum = 0.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * j * j * lambda * lambda);
        sum += (j % 2 == 1 ? term : -term);
        if (term < 1e-12) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace

double ks_two_sample_pvalue(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty())
        throw std::invalid_argument("ks_two_sample_pvalue: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / na -
                                  static_cast<double>(j) / nb));
    }
    const double ne = std::sqrt(na * nb / (na + nb));
    return kolmogorov_q(d * (ne + 0.12 + 0.11 / ne));
}

}  // namespace cdi

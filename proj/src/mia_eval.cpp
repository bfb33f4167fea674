#include "cdi/mia_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "cdi/rng.hpp"

namespace cdi {

ScoredPopulation::ScoredPopulation(std::vector<double> members,
                                   std::vector<double> nonmembers,
                                   Orientation orientation)
    : member_scores(std::move(members)), nonmember_scores(std::move(nonmembers)) {
    if (member_scores.empty() || nonmember_scores.empty())
        throw std::invalid_argument("ScoredPopulation: both sides must be non-empty");
    if (orientation == Orientation::lower_is_member) {
        for (double& s : member_scores) s = -s;
        for (double& s : nonmember_scores) s = -s;
    }
}

std::vector<RocPoint> roc_curve(const ScoredPopulation& pop) {
    // Sweep thresholds downward; prediction is "member" iff score > threshold.
    struct Entry {
        double score;
        bool is_member;
    };
    std::vector<Entry> all;
    all.reserve(pop.member_scores.size() + pop.nonmember_scores.size());
    for (double s : pop.member_scores) all.push_back({s, true});
    for (double s : pop.nonmember_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(),
              [](const Entry& a, const Entry& b) { return a.score > b.score; });

    const double nm = static_cast<double>(pop.member_scores.size());
    const double nn = static_cast<double>(pop.nonmember_scores.size());
    std::vector<RocPoint> curve;
    curve.push_back({0.0, 0.0});
    size_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < all.size()) {
        const double thr = all[i].score;
        while (i < all.size() && all[i].score == thr) {  // ties grouped
            if (all[i].is_member)
                ++tp;
            else
                ++fp;
            ++i;
        }
        curve.push_back({static_cast<double>(fp) / nn, static_cast<double>(tp) / nm});
    }
    if (curve.back().fpr != 1.0 || curve.back().tpr != 1.0) curve.push_back({1.0, 1.0});
    return curve;
}

double auc(const ScoredPopulation& pop) {
    struct Entry {
        double score;
        bool is_member;
    };
    std::vector<Entry> all;
    all.reserve(pop.member_scores.size() + pop.nonmember_scores.size());
    for (double s : pop.member_scores) all.push_back({s, true});
    for (double s : pop.nonmember_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });

    // midranks over tie groups
    double rank_sum_members = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t k = i; k < j; ++k)
            if (all[k].is_member) rank_sum_members += midrank;
        i = j;
    }
    const double nm = static_cast<double>(pop.member_scores.size());
    const double nn = static_cast<double>(pop.nonmember_scores.size());
    return (rank_sum_members - nm * (nm + 1.0) / 2.0) / (nm * nn);
}

double tpr_at_fpr(const ScoredPopulation& pop, double fpr) {
    if (!(fpr >= 0.0 && fpr <= 1.0))
        throw std::invalid_argument("tpr_at_fpr: fpr out of [0,1]");
    const size_t nn = pop.nonmember_scores.size();
    if (nn < 100)
        std::fprintf(stderr,
                     "tpr_at_fpr: warning, only %zu non-members; the %.3f quantile "
                     "is coarse\n",
                     nn, 1.0 - fpr);
    // Allow at most floor(fpr * nn) non-members strictly above the threshold:
    // the threshold is the (k+1)-th largest non-member score.
    const size_t k = static_cast<size_t>(std::floor(fpr * static_cast<double>(nn)));
    double threshold;
    if (k >= nn) {
        threshold = -std::numeric_limits<double>::infinity();
    } else {
        std::vector<double> sorted = pop.nonmember_scores;
        std::sort(sorted.begin(), sorted.end(), std::greater<double>());
        threshold = sorted[k];
    }
    size_t above = 0;
    for (double s : pop.member_scores)
        if (s > threshold) ++above;
    return static_cast<double>(above) / static_cast<double>(pop.member_scores.size());
}

double best_threshold_accuracy(const ScoredPopulation& pop) {
    // candidates: every distinct score (predict member iff score > thr) plus
    // -inf (predict everything member)
    std::vector<double> thresholds;
    thresholds.reserve(pop.member_scores.size() + pop.nonmember_scores.size() + 1);
    thresholds.insert(thresholds.end(), pop.member_scores.begin(),
                      pop.member_scores.end());
    thresholds.insert(thresholds.end(), pop.nonmember_scores.begin(),
                      pop.nonmember_scores.end());
    thresholds.push_back(-std::numeric_limits<double>::infinity());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                     thresholds.end());

    const double nm = static_cast<double>(pop.member_scores.size());
    const double nn = static_cast<double>(pop.nonmember_scores.size());
    std::vector<double> ms = pop.member_scores;
    std::vector<double> ns = pop.nonmember_scores;
    std::sort(ms.begin(), ms.end());
    std::sort(ns.begin(), ns.end());

    double best = 0.0;
    for (double thr : thresholds) {
        const double tp = static_cast<double>(
            ms.end() - std::upper_bound(ms.begin(), ms.end(), thr));
        const double fp = static_cast<double>(
            ns.end() - std::upper_bound(ns.begin(), ns.end(), thr));
        const double bal = 0.5 * (tp / nm + (nn - fp) / nn);
        best = std::max(best, bal);
    }
    return best;
}

double set_level_mia(const std::vector<double>& member_pool,
                     const std::vector<double>& nonmember_pool, int set_size,
                     int n_sets, uint64_t seed, double fpr) {
    if (set_size < 1) throw std::invalid_argument("set_level_mia: set_size must be >= 1");
    if (member_pool.size() < static_cast<size_t>(set_size) ||
        nonmember_pool.size() < static_cast<size_t>(set_size))
        throw std::invalid_argument("set_level_mia: pools smaller than set_size");

    auto max_of_subset = [set_size](const std::vector<double>& pool, Rng& rng) {
        std::vector<size_t> idx(pool.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        double best = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < set_size; ++i) {
            const size_t j = i + rng.below(idx.size() - static_cast<size_t>(i));
            std::swap(idx[static_cast<size_t>(i)], idx[j]);
            best = std::max(best, pool[idx[static_cast<size_t>(i)]]);
        }
        return best;
    };

    std::vector<double> set_member(static_cast<size_t>(n_sets));
    std::vector<double> set_nonmember(static_cast<size_t>(n_sets));
    for (int s = 0; s < n_sets; ++s) {
        Rng rng = derive_rng(seed, "set_mia", static_cast<uint64_t>(s));
        set_member[static_cast<size_t>(s)] = max_of_subset(member_pool, rng);
        set_nonmember[static_cast<size_t>(s)] = max_of_subset(nonmember_pool, rng);
    }
    return tpr_at_fpr(ScoredPopulation(std::move(set_member), std::move(set_nonmember)),
                      fpr);
}

}  // namespace cdi

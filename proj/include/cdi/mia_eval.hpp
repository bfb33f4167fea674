#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace cdi {

enum class Orientation { higher_is_member, lower_is_member };

// Member / non-member score arrays with the orientation applied once at
// construction: scores are negated for lower_is_member so every metric below
// can assume higher means member.
struct ScoredPopulation {
    std::vector<double> member_scores;
    std::vector<double> nonmember_scores;

    ScoredPopulation(std::vector<double> members, std::vector<double> nonmembers,
                     Orientation orientation = Orientation::higher_is_member);
};

struct RocPoint {
    double fpr;
    double tpr;
};

// Stepwise curve over all distinct thresholds (ties grouped), endpoints
// (0,0) and (1,1) included, sorted by fpr.
std::vector<RocPoint> roc_curve(const ScoredPopulation& pop);

// Mann-Whitney formulation with midrank tie correction.
double auc(const ScoredPopulation& pop);

// TPR at the conservative empirical threshold: the largest membership rate
// achievable while keeping the non-member false-positive rate <= fpr, with
// ties at the threshold resolved in favor of non-members.
double tpr_at_fpr(const ScoredPopulation& pop, double fpr = 0.01);

// Max over all thresholds of balanced accuracy (eval-optimistic by design;
// reported as such).
double best_threshold_accuracy(const ScoredPopulation& pop);

// Set-level attack baseline: n_sets subsets of size set_size per side, each
// scored by its max element, then TPR@FPR on the set scores. The caller maps
// samples to scores first.
double set_level_mia(const std::vector<double>& member_pool,
                     const std::vector<double>& nonmember_pool, int set_size,
                     int n_sets = 1000, uint64_t seed = 0, double fpr = 0.01);

}  // namespace cdi

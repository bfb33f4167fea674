#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cdi {

// n x k feature table with membership labels. Duplicate sample ids are
// rejected; |members| == |non-members| is enforced unless the caller opts
// out (the imbalance experiment does).
struct LabeledFeatures {
    std::vector<std::string> sample_ids;
    std::vector<std::vector<double>> rows;
    std::vector<uint8_t> labels;  // 1 = member
    std::vector<std::string> feature_names;

    size_t n() const { return rows.size(); }
    size_t k() const { return rows.empty() ? 0 : rows[0].size(); }

    static LabeledFeatures make(std::vector<std::string> ids,
                                std::vector<std::vector<double>> rows,
                                std::vector<uint8_t> labels,
                                std::vector<std::string> feature_names,
                                bool enforce_balance = true);
};

// Logistic regression over z-scored features. Zero-variance columns are
// dropped at fit time and recorded. score() maps a raw feature row to (0,1),
// higher = more member-like.
struct ScoringModel {
    std::vector<double> weights;  // one per retained feature
    double bias = 0.0;
    std::vector<double> feat_mean;  // per original feature column
    std::vector<double> feat_std;
    std::vector<int> retained;  // original column indices that survived
    std::vector<std::string> dropped_features;
    std::vector<std::string> feature_names;
    bool converged = false;
    int iterations = 0;

    double score(const std::vector<double>& row) const;
    std::vector<double> score_all(const std::vector<std::vector<double>>& rows) const;
};

// L2-regularized fit on control data; objective is mean log-loss +
// reg_strength/(2n) * |w|^2, solved with L-BFGS capped at max_iter.
ScoringModel fit_scorer(const LabeledFeatures& ctrl, double reg_strength = 1.0,
                        uint64_t seed = 0, int max_iter = 1000);

// Stratified fold assignment: per-class shuffle, round-robin. Fold sizes per
// class differ by at most one.
std::vector<int> fold_assignment(size_t n, int k_folds, uint64_t seed);

struct KfoldScores {
    std::vector<double> scores_P;  // aligned with the P input order
    std::vector<double> scores_U;
    std::vector<int> fold_P;
    std::vector<int> fold_U;
    std::vector<ScoringModel> fold_models;  // one per fold, for audit export
};

// Cross-fit scoring: every sample is scored exactly once, by a model fitted
// on folds that never contained it. Requires at least two samples per class
// per fold (leave-one-out style fold counts are rejected).
KfoldScores kfold_scores(const std::vector<std::vector<double>>& P_feats,
                         const std::vector<std::vector<double>>& U_feats,
                         int k_folds = 5, uint64_t seed = 0,
                         double reg_strength = 1.0,
                         std::vector<std::string> feature_names = {});

}  // namespace cdi

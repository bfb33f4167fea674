#include "cdi/scoring.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "cdi/lbfgs.hpp"
#include "cdi/rng.hpp"

namespace cdi {

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(m)) without overflow
double softplus(double m) {
    if (m > 35.0) return m;
    if (m < -35.0) return std::exp(m);
    return std::log1p(std::exp(m));
}

}  // namespace

LabeledFeatures LabeledFeatures::make(std::vector<std::string> ids,
                                      std::vector<std::vector<double>> rows,
                                      std::vector<uint8_t> labels,
                                      std::vector<std::string> feature_names,
                                      bool enforce_balance) {
    if (ids.size() != rows.size() || ids.size() != labels.size())
        throw std::invalid_argument("LabeledFeatures: size mismatch");
    std::unordered_set<std::string> seen;
    for (const auto& id : ids)
        if (!seen.insert(id).second)
            throw std::invalid_argument("LabeledFeatures: duplicate sample_id " + id);
    const size_t k = rows.empty() ? feature_names.size() : rows[0].size();
    for (const auto& r : rows)
        if (r.size() != k)
            throw std::invalid_argument("LabeledFeatures: ragged feature rows");
    if (!feature_names.empty() && feature_names.size() != k)
        throw std::invalid_argument("LabeledFeatures: feature name count mismatch");
    if (enforce_balance) {
        size_t pos = 0;
        for (uint8_t l : labels) pos += l;
        if (pos * 2 != labels.size())
            throw std::invalid_argument(
                "LabeledFeatures: |members| != |non-members| (pass "
                "enforce_balance=false for the imbalance experiment)");
    }
    LabeledFeatures lf;
    lf.sample_ids = std::move(ids);
    lf.rows = std::move(rows);
    lf.labels = std::move(labels);
    lf.feature_names = std::move(feature_names);
    return lf;
}

double ScoringModel::score(const std::vector<double>& row) const {
    if (row.size() != feat_mean.size())
        throw std::invalid_argument("ScoringModel::score: feature dimension mismatch");
    double z = bias;
    for (size_t j = 0; j < retained.size(); ++j) {
        const int col = retained[j];
        z += weights[j] * (row[static_cast<size_t>(col)] - feat_mean[static_cast<size_t>(col)]) /
             feat_std[static_cast<size_t>(col)];
    }
    return sigmoid(z);
}

std::vector<double> ScoringModel::score_all(
    const std::vector<std::vector<double>>& rows) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(score(r));
    return out;
}

ScoringModel fit_scorer(const LabeledFeatures& ctrl, double reg_strength,
                        uint64_t /*seed*/, int max_iter) {
    const size_t n = ctrl.n();
    if (n == 0) throw std::invalid_argument("fit_scorer: empty control set");
    size_t pos = 0;
    for (uint8_t l : ctrl.labels) pos += l;
    if (pos == 0 || pos == n)
        throw std::invalid_argument("fit_scorer: control set must contain both classes");
    const size_t k = ctrl.k();
    if (n < 2 * k)
        std::fprintf(stderr,
                     "fit_scorer: warning, n=%zu < 2k=%zu; fit may be unstable\n", n,
                     2 * k);

    ScoringModel model;
    model.feature_names = ctrl.feature_names;
    model.feat_mean.assign(k, 0.0);
    model.feat_std.assign(k, 0.0);
    for (const auto& row : ctrl.rows)
        for (size_t j = 0; j < k; ++j) model.feat_mean[j] += row[j];
    for (size_t j = 0; j < k; ++j) model.feat_mean[j] /= static_cast<double>(n);
    for (const auto& row : ctrl.rows)
        for (size_t j = 0; j < k; ++j) {
            const double d = row[j] - model.feat_mean[j];
            model.feat_std[j] += d * d;
        }
    for (size_t j = 0; j < k; ++j) {
        model.feat_std[j] = std::sqrt(model.feat_std[j] / static_cast<double>(n));
        if (model.feat_std[j] > 1e-12) {
            model.retained.push_back(static_cast<int>(j));
        } else {
            model.feat_std[j] = 1.0;  // neutral; column is not used anyway
            model.dropped_features.push_back(
                j < ctrl.feature_names.size() ? ctrl.feature_names[j]
                                              : "col" + std::to_string(j));
        }
    }

    const size_t kr = model.retained.size();
    // standardized design matrix, retained columns only
    std::vector<std::vector<double>> X(n, std::vector<double>(kr));
    std::vector<double> y(n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < kr; ++j) {
            const size_t col = static_cast<size_t>(model.retained[j]);
            X[i][j] = (ctrl.rows[i][col] - model.feat_mean[col]) / model.feat_std[col];
        }
        y[i] = ctrl.labels[i] ? 1.0 : -1.0;
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    auto objective = [&](const std::vector<double>& theta,
                         std::vector<double>& grad) -> double {
        // theta = [w(kr), b]
        grad.assign(theta.size(), 0.0);
        double loss = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double z = theta[kr];
            for (size_t j = 0; j < kr; ++j) z += theta[j] * X[i][j];
            const double m = -y[i] * z;
            loss += softplus(m);
            const double dz = -y[i] * sigmoid(m) * inv_n;
            for (size_t j = 0; j < kr; ++j) grad[j] += dz * X[i][j];
            grad[kr] += dz;
        }
        loss *= inv_n;
        for (size_t j = 0; j < kr; ++j) {  // bias unregularized
            loss += 0.5 * reg_strength * inv_n * theta[j] * theta[j];
            grad[j] += reg_strength * inv_n * theta[j];
        }
        return loss;
    };

    std::vector<double> theta0(kr + 1, 0.0);
    LbfgsOptions opts;
    opts.grad_tol = 1e-9;
    LbfgsResult res = lbfgs_minimize(objective, theta0, max_iter, opts);
    model.weights.assign(res.x.begin(), res.x.begin() + static_cast<long>(kr));
    model.bias = res.x[kr];
    model.converged = res.converged;
    model.iterations = res.iterations;
    return model;
}

std::vector<int> fold_assignment(size_t n, int k_folds, uint64_t seed) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng = derive_rng(seed, "fold_assignment");
    rng.shuffle(order);
    std::vector<int> fold(n, 0);
    for (size_t i = 0; i < n; ++i)
        fold[order[i]] = static_cast<int>(i % static_cast<size_t>(k_folds));
    return fold;
}

KfoldScores kfold_scores(const std::vector<std::vector<double>>& P_feats,
                         const std::vector<std::vector<double>>& U_feats,
                         int k_folds, uint64_t seed, double reg_strength,
                         std::vector<std::string> feature_names) {
    if (k_folds < 2) throw std::invalid_argument("kfold_scores: k_folds must be >= 2");
    const size_t nP = P_feats.size(), nU = U_feats.size();
    // Every test fold needs at least two samples per class, so leave-one-out
    // style configurations (k == n) are rejected rather than silently run.
    if (nP < 2 * static_cast<size_t>(k_folds) || nU < 2 * static_cast<size_t>(k_folds))
        throw std::invalid_argument(
            "kfold_scores: need at least 2*k_folds samples per side (got |P|=" +
            std::to_string(nP) + ", |U|=" + std::to_string(nU) + ", k=" +
            std::to_string(k_folds) + ")");
    const size_t k = P_feats[0].size();
    for (const auto& r : P_feats)
        if (r.size() != k) throw std::invalid_argument("kfold_scores: ragged P rows");
    for (const auto& r : U_feats)
        if (r.size() != k) throw std::invalid_argument("kfold_scores: ragged U rows");

    // stratified: independent per-class assignment
    const std::vector<int> fold_P = fold_assignment(nP, k_folds, hash_combine(seed, 1));
    const std::vector<int> fold_U = fold_assignment(nU, k_folds, hash_combine(seed, 2));

    KfoldScores out;
    out.scores_P.assign(nP, 0.0);
    out.scores_U.assign(nU, 0.0);
    out.fold_P = fold_P;
    out.fold_U = fold_U;

    std::vector<std::string> names = std::move(feature_names);
    if (names.size() != k) {
        names.resize(k);
        for (size_t j = 0; j < k; ++j) names[j] = "f" + std::to_string(j);
    }

    for (int fold = 0; fold < k_folds; ++fold) {
        std::vector<std::string> ids;
        std::vector<std::vector<double>> rows;
        std::vector<uint8_t> labels;
        for (size_t i = 0; i < nP; ++i)
            if (fold_P[i] != fold) {
                ids.push_back("P" + std::to_string(i));
                rows.push_back(P_feats[i]);
                labels.push_back(1);
            }
        for (size_t i = 0; i < nU; ++i)
            if (fold_U[i] != fold) {
                ids.push_back("U" + std::to_string(i));
                rows.push_back(U_feats[i]);
                labels.push_back(0);
            }
        LabeledFeatures ctrl = LabeledFeatures::make(std::move(ids), std::move(rows),
                                                     std::move(labels), names,
                                                     /*enforce_balance=*/false);
        ScoringModel model = fit_scorer(ctrl, reg_strength, seed);
        for (size_t i = 0; i < nP; ++i)
            if (fold_P[i] == fold) out.scores_P[i] = model.score(P_feats[i]);
        for (size_t i = 0; i < nU; ++i)
            if (fold_U[i] == fold) out.scores_U[i] = model.score(U_feats[i]);
        out.fold_models.push_back(std::move(model));
    }
    return out;
}

}  // namespace cdi

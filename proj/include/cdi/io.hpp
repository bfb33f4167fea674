#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cdi/conv_denoiser.hpp"
#include "cdi/features.hpp"
#include "cdi/schedule.hpp"
#include "cdi/scoring.hpp"
#include "cdi/stats.hpp"

namespace cdi {

// ---- checkpoint ----
// Self-describing container: magic, JSON header (architecture, schedule
// constants, training seed), raw float64 parameter blob.

struct Checkpoint {
    ConvDenoiserConfig model_config;
    std::vector<double> params;
    int schedule_T = 1000;
    double beta_min = 1e-4;
    double beta_max = 2e-2;
    uint64_t train_seed = 0;
    int train_steps = 0;

    std::unique_ptr<ConvDenoiser> build_model() const;
    NoiseSchedule build_schedule() const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// ---- feature cache ----
// CSV: sample_id,split,is_member,<feature names...>; deterministic row order
// by sample_id. A JSON sidecar records specs, seeds and the checkpoint hash.

struct FeatureCacheRow {
    std::string sample_id;
    std::string split;  // "P", "U", "Ux"
    bool is_member = false;
    std::vector<double> values;
};

struct FeatureCache {
    std::vector<std::string> feature_names;
    std::vector<FeatureCacheRow> rows;

    std::vector<std::vector<double>> rows_for(const std::string& split) const;
    std::vector<std::string> ids_for(const std::string& split) const;
};

void write_feature_cache(const std::string& csv_path, const FeatureCache& cache);
FeatureCache read_feature_cache(const std::string& csv_path);
void write_feature_sidecar(const std::string& json_path,
                           const std::vector<FeatureSpec>& specs, uint64_t seed,
                           uint64_t checkpoint_hash, uint64_t manifest_hash,
                           const std::vector<std::string>& excluded_samples);

// ---- score and verdict artifacts ----

struct ScoreRow {
    std::string sample_id;
    bool is_member;
    int fold;
    double score;
};
void write_score_dump(const std::string& csv_path, const std::vector<ScoreRow>& rows);

// Per-fold weights/bias/standardization for audit.
void write_scoring_models_json(const std::string& path,
                               const std::vector<ScoringModel>& models,
                               uint64_t manifest_hash);

void write_verdict_json(const std::string& path, const VerificationVerdict& v,
                        uint64_t manifest_hash);

struct MiaMetrics {
    std::string feature;
    double auc = 0.5;
    double tpr_at_1pct_fpr = 0.0;
    double accuracy = 0.5;
    std::string roc_points_csv_path;
};
void write_mia_metrics_json(const std::string& path,
                            const std::vector<MiaMetrics>& metrics,
                            uint64_t manifest_hash);
void write_roc_csv(const std::string& path,
                   const std::vector<std::pair<double, double>>& points);

// ---- plots ----
// p-value vs |P| curves with 95% CI bands on a log-y axis, emitted as SVG.

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> lo, hi;  // optional CI band, same length as x
};
void write_pvalue_plot_svg(const std::string& path, const std::string& title,
                           const std::vector<PlotSeries>& series, double alpha);

// ---- misc ----
uint64_t hash_file(const std::string& path);  // FNV-1a over bytes
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace cdi

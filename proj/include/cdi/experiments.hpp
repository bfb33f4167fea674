#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cdi/config.hpp"
#include "cdi/dataset.hpp"
#include "cdi/features.hpp"
#include "cdi/io.hpp"
#include "cdi/scoring.hpp"
#include "cdi/stats.hpp"
#include "cdi/training.hpp"

namespace cdi {

// Fully-resolved run description. Every field has a default; a config file
// and CLI flags override. The canonical serialized form is what gets hashed
// into the manifest, so identical configs reproduce identical artifacts.
struct ExperimentConfig {
    DatasetSpec dataset;
    SplitSizes splits;

    int model_hidden = 32;
    int model_blocks = 3;
    int model_time_embed_dim = 32;
    uint64_t model_init_seed = 1;

    int schedule_T = 1000;
    double beta_min = 1e-4;
    double beta_max = 2e-2;

    int train_steps = 6000;
    int train_batch = 32;
    double train_lr = 2e-3;
    bool use_labels = false;
    int log_every = 500;

    std::string feature_set = "all";  // all | gray_box | existing_mias | name list
    ExtractionContext feature_params;  // denoiser/schedule filled at run time

    int k_folds = 5;
    double reg_strength = 1.0;

    int trials = 1000;
    double alpha = 0.01;
    int eval_size = 0;  // 0 -> splits.p_pool

    std::string out_dir = "cdi-out";
    uint64_t seed = 42;
    int threads = 0;

    static ExperimentConfig from_config(const ConfigMap& cm);
    ConfigMap to_config() const;
    uint64_t config_hash() const;

    std::string checkpoint_path() const { return out_dir + "/model.ckpt"; }
    std::string schedule_csv_path() const { return out_dir + "/schedule.csv"; }
    std::string feature_cache_path() const { return out_dir + "/features.csv"; }
    std::string feature_sidecar_path() const { return out_dir + "/features.json"; }
    std::string manifest_path() const { return out_dir + "/manifest.json"; }

    std::vector<FeatureSpec> resolve_feature_set(const ExtractionContext& ctx) const;
    int resolved_eval_size() const {
        return eval_size > 0 ? eval_size : static_cast<int>(splits.p_pool);
    }
};

struct RunManifest {
    uint64_t config_hash = 0;
    uint64_t checkpoint_hash = 0;
    uint64_t feature_cache_hash = 0;
    std::string resolved_config;
    std::string created_at;  // informational; excluded from the hash
    double train_loss_t100 = 0.0;
    double heldout_loss_t100 = 0.0;
    double split_ks_pvalue = 1.0;

    // Deterministic function of the content hashes only.
    uint64_t manifest_hash() const;
    void write(const std::string& path) const;
};

// Trained model + features, shared by every experiment. Building is lazy:
// checkpoint and feature cache are reused from out_dir when present and
// rebuilt otherwise.
struct Pipeline {
    ExperimentConfig cfg;
    Splits splits;
    std::unique_ptr<ConvDenoiser> model;
    std::optional<NoiseSchedule> schedule;
    FeatureCache cache;
    std::vector<std::string> excluded_samples;
    RunManifest manifest;

    ExtractionContext context() const;
};

// Stages: splits -> model (train or load) -> features (extract or load).
Pipeline build_pipeline(const ExperimentConfig& cfg, bool features_needed = true);

// Feature extraction over a sample list; parallel across samples, values
// depend only on (seed, sample_id). Failed samples are skipped and recorded.
FeatureCache extract_features(const std::vector<ImageSample>& p_samples,
                              const std::vector<ImageSample>& u_samples,
                              const std::vector<ImageSample>& contam_samples,
                              const ExtractionContext& ctx,
                              const std::vector<FeatureSpec>& specs, int threads,
                              std::vector<std::string>& excluded);

struct CdiRunResult {
    VerificationVerdict verdict;
    KfoldScores scores;
    double power_at_alpha = 0.0;  // from Cohen's d on the full scored pools
    double cohens_d_value = 0.0;
};

// extract_all -> kfold_scores -> cdi_verdict, artifacts written to out_dir.
CdiRunResult run_cdi(Pipeline& pipe);

struct SweepPoint {
    int size = 0;
    VerificationVerdict verdict;
};
std::vector<SweepPoint> sweep_sample_size(Pipeline& pipe, const std::vector<int>& sizes);

struct ContaminationPoint {
    double ratio = 0.0;
    int size = 0;
    VerificationVerdict verdict;
};
std::vector<ContaminationPoint> contamination_run(Pipeline& pipe,
                                                  const std::vector<double>& ratios,
                                                  const std::vector<int>& sizes);

struct NullRunResult {
    double mean_p = 0.5;          // per-trial protocol, arithmetic mean
    double rejection_rate = 0.0;  // per-trial rate at alpha
    double kfold_null_mean_p = 0.5;  // diagnostic: one shared k-fold scoring
    int trials = 0;
    int n_per_trial = 0;
    std::vector<double> trial_p;
};

// False-positive run: both the suspect and validation sides come from
// held-out data. Each trial is one full single-owner verification on a fresh
// ctrl/test partition of the held-out reservoir (fit on ctrl, Welch on
// test), which keeps the per-trial p-values calibrated; the frozen k-fold
// aggregate over the same reservoir is reported alongside as a diagnostic.
NullRunResult false_positive_run(Pipeline& pipe, int trials);

struct AblationResult {
    std::string subset_name;
    std::vector<std::string> features;
    int min_p_to_reject = 0;  // 0 = never rejected up to the pool size
};
// Doubling grid then bisection (resolution 10) over n_per_trial for each
// feature subset.
std::vector<AblationResult> ablate_features(
    Pipeline& pipe, const std::vector<std::vector<std::string>>& subsets);

struct MiaEvalResult {
    std::vector<MiaMetrics> per_feature;
    double set_level_tpr = 0.0;  // set-level MIA on the k-fold scores
    double cdi_power = 0.0;      // CDI power at alpha on the same scores
    int set_size = 0;
};
MiaEvalResult mia_eval_run(Pipeline& pipe, int set_size = 0, int n_sets = 1000);

// Re-emits summary JSON, CSV tables and SVG plots from results in memory.
void emit_sweep_report(const ExperimentConfig& cfg,
                       const std::vector<SweepPoint>& points, uint64_t manifest_hash,
                       const std::string& stem = "sweep");
void emit_contamination_report(const ExperimentConfig& cfg,
                               const std::vector<ContaminationPoint>& points,
                               uint64_t manifest_hash);
void emit_ablation_report(const ExperimentConfig& cfg,
                          const std::vector<AblationResult>& results,
                          uint64_t manifest_hash);

// Map subset shorthand ("all", "gray_box", "existing_mias") or explicit
// comma-separated extractor names to cache column indices.
std::vector<int> feature_columns_for(const std::vector<std::string>& extractor_names,
                                     const std::vector<std::string>& cache_columns);

}  // namespace cdi
